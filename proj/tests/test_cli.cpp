#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "moma/config.hpp"
#include "moma/motion_data.hpp"
#include "moma/plot.hpp"

using namespace moma;
namespace fs = std::filesystem;

namespace {

#ifndef MOMA_CLI_PATH
#define MOMA_CLI_PATH "moma"
#endif

int run(const std::string& args) {
  const std::string cmd = std::string(MOMA_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

fs::path work_dir() {
  const fs::path dir = fs::temp_directory_path() / "moma_cli_test";
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("cli: exit codes for bad invocations") {
  CHECK(run("no-such-command") == 1);
  CHECK(run("generate") == 1);                      // missing required flags
  CHECK(run("plot --in /nonexistent --out /tmp/x.svg") == 1);
  CHECK(run("--help") == 0);
}

TEST_CASE("cli: make-toy-data is deterministic and writes a manifest") {
  const fs::path dir = work_dir();
  const fs::path d1 = dir / "data1";
  const fs::path d2 = dir / "data2";
  fs::remove_all(d1);
  fs::remove_all(d2);
  const std::string common =
      " --classes 2 --per-class 3 --joints 3 --min-len 12 --max-len 16 --seed 5";
  REQUIRE(run("make-toy-data --out " + d1.string() + common) == 0);
  REQUIRE(run("make-toy-data --out " + d2.string() + common) == 0);

  const auto m1 = read_corpus_manifest((d1 / "manifest.tsv").string());
  CHECK(m1.size() == 6);
  for (const auto& e : m1) {
    CHECK(hash_file_hex((d1 / e.file).string()) ==
          hash_file_hex((d2 / e.file).string()));
  }
  CHECK(fs::exists(d1 / "run.manifest"));
}

TEST_CASE("cli: vae training, reconstruction, generation, plot pipeline") {
  const fs::path dir = work_dir();
  const fs::path data = dir / "pipe_data";
  fs::remove_all(data);
  REQUIRE(run("make-toy-data --out " + data.string() +
              " --classes 2 --per-class 6 --joints 2 --min-len 12 --max-len 16"
              " --seed 3") == 0);
  const std::string manifest = (data / "manifest.tsv").string();

  // A deliberately tiny budget: the pipeline must run, not converge.
  const fs::path cfgfile = dir / "tiny.cfg";
  {
    std::ofstream os(cfgfile);
    os << "vae.latent_dim = 6\n";
    os << "vae.res_layers = 1\n";
    os << "vae.widths = 8,8\n";
    os << "vae.iterations = 12\n";
    os << "vae.batch_size = 4\n";
    os << "vae.lr = 0.001\n";
    os << "mad.layers = 1\n";
    os << "mad.heads = 2\n";
    os << "mad.hidden = 16\n";
    os << "mad.cond_dim = 8\n";
    os << "mad.text_dim = 5\n";
    os << "mad.ffn_mult = 2\n";
    os << "mad.iterations = 12\n";
    os << "mad.batch_size = 4\n";
    os << "mad.warmup_iters = 2\n";
    os << "head.blocks = 2\n";
    os << "head.width = 16\n";
    os << "head.timestep_embed_dim = 8\n";
    os << "diffusion.t_diff = 8\n";
    os << "infer.steps = 2\n";
    os << "infer.target_frames = 16\n";
  }
  const std::string vae_ckpt = (dir / "vae.ckpt").string();
  const std::string mad_ckpt = (dir / "mad.ckpt").string();
  REQUIRE(run("train-vae --data " + manifest + " --out " + vae_ckpt +
              " --config " + cfgfile.string()) == 0);
  CHECK(fs::exists(vae_ckpt));
  CHECK(fs::exists(vae_ckpt + ".manifest"));

  REQUIRE(run("train-mad --data " + manifest + " --vae " + vae_ckpt + " --out " +
              mad_ckpt + " --config " + cfgfile.string()) == 0);
  CHECK(fs::exists(mad_ckpt));

  const auto entries = read_corpus_manifest(manifest);
  const std::string input = (data / entries[0].file).string();
  const std::string recon = (dir / "recon.moma").string();
  REQUIRE(run("reconstruct --in " + input + " --vae " + vae_ckpt + " --out " +
              recon) == 0);
  CHECK(fs::exists(recon));

  const std::string gen1 = (dir / "gen1.moma").string();
  const std::string gen2 = (dir / "gen2.moma").string();
  const std::string gen_args = " --vae " + vae_ckpt + " --mad " + mad_ckpt +
                               " --config " + cfgfile.string() +
                               " --text \"a person waves\" --seed 9";
  REQUIRE(run("generate --out " + gen1 + gen_args) == 0);
  REQUIRE(run("generate --out " + gen2 + gen_args) == 0);
  CHECK(hash_file_hex(gen1) == hash_file_hex(gen2));  // byte-identical outputs

  MotionSequence gen = load_motion(gen1);
  CHECK(gen.length() == 16);

  // Editing and stitching drive the same checkpoints.
  const std::string edited = (dir / "edit.moma").string();
  REQUIRE(run("edit --in " + gen1 + " --preserve 0:8 --out " + edited + gen_args) == 0);
  CHECK(load_motion(edited).length() == 16);

  const std::string stitched = (dir / "stitch.moma").string();
  REQUIRE(run("stitch --in-a " + gen1 + " --in-b " + gen2 +
              " --transition 8 --context 8 --out " + stitched + gen_args) == 0);
  CHECK(load_motion(stitched).length() == 16 + 8 + 16);

  const std::string svg1 = (dir / "plot1.svg").string();
  const std::string svg2 = (dir / "plot2.svg").string();
  REQUIRE(run("plot --in " + gen1 + " --out " + svg1 + " --stride 5") == 0);
  REQUIRE(run("plot --in " + gen1 + " --out " + svg2 + " --stride 5") == 0);
  CHECK(hash_file_hex(svg1) == hash_file_hex(svg2));
}

TEST_CASE("plot: pose count follows ceil(T/stride); deterministic bytes") {
  ToyCorpusSpec spec;
  spec.n_classes = 2;
  spec.n_per_class = 1;
  spec.joint_count = 3;
  spec.t_min = 17;
  spec.t_max = 17;
  spec.seed = 6;
  ToyCorpus corpus = generate_toy_corpus(spec);
  const std::string svg = render_skeleton_svg(corpus.sequences[0], 5);
  // ceil(17/5) = 4 poses, each a <g> group.
  size_t count = 0, pos = 0;
  while ((pos = svg.find("<g ", pos)) != std::string::npos) {
    ++count;
    pos += 3;
  }
  CHECK(count == 4);
  CHECK(render_skeleton_svg(corpus.sequences[0], 5) == svg);
}
