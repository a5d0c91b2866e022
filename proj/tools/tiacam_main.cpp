// Command line front end: dataset generation and ingestion, adversarial
// training, augmentor pretraining, watermark registration/extraction, and
// the evaluation report writers. Exit codes: 0 success, 2 config error,
// 3 convergence error, 4 data error, 1 anything else.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tiacam/config.hpp"
#include "tiacam/dataset.hpp"
#include "tiacam/error.hpp"
#include "tiacam/evalsuite.hpp"
#include "tiacam/image_io.hpp"
#include "tiacam/serialize.hpp"
#include "tiacam/trainer.hpp"
#include "tiacam/watermark.hpp"

namespace fs = std::filesystem;
using namespace tiacam;

namespace {

struct GlobalOpts {
  std::string config_path;
  std::string out_dir = ".";
  std::string precision = "f64";
  std::optional<uint64_t> seed;
};

RunConfig load_run_config(const GlobalOpts& g) {
  RunConfig cfg;
  if (!g.config_path.empty()) cfg = load_config(g.config_path);
  if (g.seed) cfg.train.seed = *g.seed;
  cfg.validate();
  return cfg;
}

uint64_t eval_seed(const GlobalOpts& g, const RunConfig& cfg) {
  return g.seed ? *g.seed : cfg.train.seed;
}

void round_tensor_f32(Tensor& t) {
  for (double& v : t.vec()) v = double(float(v));
}

// The engine computes in f64 throughout; f32 rounds the ingested values so
// a run can probe sensitivity to storage precision.
void apply_precision(Dataset& ds, const std::string& precision) {
  if (precision == "f64") return;
  for (Tensor& img : ds.images) round_tensor_f32(img);
  round_tensor_f32(ds.anchors.E);
}

// Everything a checkpoint-consuming subcommand needs, built from one config.
struct Stack {
  RunConfig cfg;
  uint64_t cfg_hash;
  ProjectionBackbone backbone;
  TrainState state;

  explicit Stack(const RunConfig& c)
      : cfg(c),
        cfg_hash(config_hash(c)),
        backbone(c.side, c.side, c.channels, c.backbone_hidden, c.backbone_dim,
                 c.backbone_seed),
        state(make_train_state(c.train, c.extractor, c.disc, c.side, c.side,
                               c.channels, c.kernel_size)) {}

  EvalPipeline pipeline() { return {&backbone, &state.extractor}; }

  // Identifies the exact feature map: extractor weights folded with the
  // config stamp, so signatures refuse to extract through a different one.
  uint64_t pipeline_hash() {
    uint64_t h = extractor_hash(state.extractor);
    h ^= cfg_hash + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    return h;
  }
};

Dataset ingest_for(const RunConfig& cfg, const GlobalOpts& g,
                   const std::string& data_dir, const std::string& manifest) {
  Dataset ds = ingest(data_dir, cfg.side, manifest);
  apply_precision(ds, g.precision);
  return ds;
}

void require_anchor_width(const Dataset& ds, const RunConfig& cfg) {
  if (ds.anchors.dim() != cfg.extractor.out_dim) {
    throw ConfigError("anchor embedding width " +
                      std::to_string(ds.anchors.dim()) +
                      " does not match extractor.out_dim " +
                      std::to_string(cfg.extractor.out_dim));
  }
}

Message parse_message(const std::string& bits, int k_flag, Rng& rng) {
  if (bits.rfind("random:", 0) == 0) {
    int k = 0;
    try {
      k = std::stoi(bits.substr(7));
    } catch (const std::exception&) {
      throw ConfigError("--bits random:<k> needs an integer k");
    }
    return random_message(k, rng);
  }
  int k = k_flag > 0 ? k_flag : int(bits.size()) * 4;
  return message_from_hex(bits, k);
}

std::string hex64(uint64_t h) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tiacam: invariant-feature training and feature-space "
               "zero-watermarking at desk scale"};
  app.require_subcommand(1);

  GlobalOpts g;
  app.add_option("--config", g.config_path, "JSON config file");
  app.add_option("--seed", g.seed, "override the config seed");
  app.add_option("--out", g.out_dir, "output directory (default .)");
  app.add_option("--precision", g.precision,
                 "round ingested values to f32, or keep full f64")
      ->check(CLI::IsMember({"f32", "f64"}));

  // --- gen-synthetic ---------------------------------------------------------
  auto* cmd_gen = app.add_subcommand(
      "gen-synthetic", "render a labeled shapes-on-texture dataset");
  SyntheticConfig syn;
  cmd_gen->add_option("--count", syn.count, "number of images");
  cmd_gen->add_option("--classes", syn.classes, "shape classes (1..4)");
  cmd_gen->add_option("--side", syn.side, "image side in pixels");
  cmd_gen->add_option("--dim", syn.anchor_dim, "anchor embedding width");
  cmd_gen->callback([&] {
    syn.seed = g.seed.value_or(0);
    auto ids = gen_synthetic(g.out_dir, syn);
    std::cout << "wrote " << ids.size() << " images in " << syn.classes
              << " classes to " << g.out_dir << "\n";
  });

  // --- ingest ----------------------------------------------------------------
  auto* cmd_ingest =
      app.add_subcommand("ingest", "load and validate a dataset directory");
  std::string in_data, in_manifest = "manifest.json", in_dump;
  cmd_ingest->add_option("--data", in_data, "dataset directory")->required();
  cmd_ingest->add_option("--manifest", in_manifest, "manifest file name");
  cmd_ingest->add_option("--dump", in_dump,
                         "write the loaded dataset back out to this directory");
  cmd_ingest->callback([&] {
    RunConfig cfg = load_run_config(g);
    Dataset ds = ingest_for(cfg, g, in_data, in_manifest);
    std::cout << "ingested " << ds.count() << " images at side " << ds.side
              << ", " << ds.classes() << " anchor classes of width "
              << ds.anchors.dim() << "\n";
    if (!in_dump.empty()) {
      dump_dataset(in_dump, ds);
      std::cout << "dumped to " << in_dump << "\n";
    }
  });

  // --- train -----------------------------------------------------------------
  auto* cmd_train = app.add_subcommand(
      "train", "run the three-phase adversarial optimization");
  std::string tr_data, tr_resume;
  cmd_train->add_option("--data", tr_data, "dataset directory")->required();
  cmd_train->add_option("--resume", tr_resume, "checkpoint to continue from");
  cmd_train->callback([&] {
    RunConfig cfg = load_run_config(g);
    Dataset ds = ingest_for(cfg, g, tr_data, "manifest.json");
    require_anchor_width(ds, cfg);
    Stack s(cfg);
    if (!tr_resume.empty()) load_checkpoint(tr_resume, s.state, s.cfg_hash);

    SemanticProbe probe(cfg.side, cfg.side, cfg.channels, cfg.probe_dim,
                        cfg.probe_seed);
    Trainer trainer(cfg.train, s.backbone, ds.anchors, probe);
    TrainSet set{ds.images, ds.labels};

    fs::create_directories(g.out_dir);
    auto on_ckpt = [&](TrainState& st, int64_t round) {
      save_checkpoint((fs::path(g.out_dir) /
                       ("checkpoint_round_" + std::to_string(round) + ".tic"))
                          .string(),
                      st, s.cfg_hash);
    };
    auto log = trainer.train(s.state, set, on_ckpt);

    save_checkpoint((fs::path(g.out_dir) / "checkpoint.tic").string(), s.state,
                    s.cfg_hash);
    write_metrics_csv((fs::path(g.out_dir) / "metrics.csv").string(), log,
                      cfg.train);
    if (!log.empty()) {
      const RoundMetrics& m = log.back();
      std::cout << "trained " << log.size() << " rounds, final mean_cos "
                << m.mean_cos << "\n";
    }
    std::cout << "checkpoint " << hex64(s.cfg_hash) << " written to "
              << g.out_dir << "\n";
  });

  // --- pretrain-augmentor ------------------------------------------------------
  auto* cmd_pre = app.add_subcommand(
      "pretrain-augmentor",
      "fit one distortion module to a manual profile before training");
  std::string pre_module, pre_profile = "all", pre_ckpt;
  double pre_severity = 0.5, pre_lr = 0.05;
  int pre_pairs = 16, pre_epochs = 3;
  cmd_pre->add_option("--module", pre_module,
                      "moire|geometric|photometric|additive|filter|compression")
      ->required();
  cmd_pre->add_option("--profile", pre_profile, "manual target profile");
  cmd_pre->add_option("--severity", pre_severity, "target severity in [0,1]");
  cmd_pre->add_option("--pairs", pre_pairs, "training pairs");
  cmd_pre->add_option("--epochs", pre_epochs, "epochs over the pairs");
  cmd_pre->add_option("--lr", pre_lr, "descent step size");
  cmd_pre->add_option("--checkpoint", pre_ckpt, "state to start from");
  cmd_pre->callback([&] {
    RunConfig cfg = load_run_config(g);
    Stack s(cfg);
    if (!pre_ckpt.empty()) load_checkpoint(pre_ckpt, s.state, s.cfg_hash);

    PretrainConfig pc;
    pc.lr = pre_lr;
    pc.epochs = pre_epochs;
    pc.img_h = cfg.side;
    pc.img_w = cfg.side;
    pc.img_c = cfg.channels;
    pc.seed = eval_seed(g, cfg);
    PretrainReport rep = pretrain_augmentor(s.state.aug, pre_module,
                                            pre_profile, pre_severity,
                                            pre_pairs, pc);
    fs::create_directories(g.out_dir);
    save_checkpoint((fs::path(g.out_dir) / "checkpoint.tic").string(), s.state,
                    s.cfg_hash);
    std::cout << "pretrained " << rep.module << " on " << rep.pairs
              << " pairs, " << rep.steps << " steps, final mse "
              << rep.final_mse << ", ssim " << rep.final_ssim << "\n";
  });

  // --- dump-augmented -----------------------------------------------------------
  auto* cmd_dump = app.add_subcommand(
      "dump-augmented", "write clean/distorted image pairs for inspection");
  std::string du_data, du_ckpt;
  int du_count = 4;
  cmd_dump->add_option("--data", du_data, "dataset directory")->required();
  cmd_dump->add_option("--checkpoint", du_ckpt, "trained state")->required();
  cmd_dump->add_option("--count", du_count, "pairs to write");
  cmd_dump->callback([&] {
    RunConfig cfg = load_run_config(g);
    Dataset ds = ingest_for(cfg, g, du_data, "manifest.json");
    Stack s(cfg);
    load_checkpoint(du_ckpt, s.state, s.cfg_hash);
    fs::create_directories(g.out_dir);
    Rng rng(eval_seed(g, cfg));
    int n = std::min(du_count, ds.count());
    for (int i = 0; i < n; ++i) {
      Tensor xa = compose_augment(ds.images[i], s.state.aug, rng);
      write_ppm((fs::path(g.out_dir) / (ds.ids[i] + "_clean.ppm")).string(),
                ds.images[i]);
      write_ppm(
          (fs::path(g.out_dir) / (ds.ids[i] + "_distorted.ppm")).string(),
          clamp(xa, 0.0, 1.0));
    }
    std::cout << "wrote " << n << " clean/distorted pairs to " << g.out_dir
              << "\n";
  });

  // --- register ----------------------------------------------------------------
  auto* cmd_reg = app.add_subcommand(
      "register", "fit a zero-watermark signature for one image");
  std::string rg_data, rg_ckpt, rg_image, rg_bits, rg_sig;
  int rg_k = 0;
  cmd_reg->add_option("--data", rg_data, "dataset directory")->required();
  cmd_reg->add_option("--checkpoint", rg_ckpt, "trained state")->required();
  cmd_reg->add_option("--image", rg_image, "image id")->required();
  cmd_reg->add_option("--bits", rg_bits, "hex digits or random:<k>")
      ->required();
  cmd_reg->add_option("--k", rg_k, "message length for hex --bits");
  cmd_reg->add_option("--sig", rg_sig, "signature path (default <image>.tiwm)");
  cmd_reg->callback([&] {
    RunConfig cfg = load_run_config(g);
    Dataset ds = ingest_for(cfg, g, rg_data, "manifest.json");
    Stack s(cfg);
    load_checkpoint(rg_ckpt, s.state, s.cfg_hash);

    Rng rng(eval_seed(g, cfg));
    Message msg = parse_message(rg_bits, rg_k, rng);
    Tensor f = s.pipeline().embed(ds.images[ds.index_of(rg_image)]);
    WatermarkSignature sig =
        register_signature(f, msg, cfg.register_config(eval_seed(g, cfg)),
                           rg_image, s.pipeline_hash());

    fs::create_directories(g.out_dir);
    std::string path = rg_sig.empty()
                           ? (fs::path(g.out_dir) / (rg_image + ".tiwm"))
                                 .string()
                           : rg_sig;
    write_signature(path, sig);
    std::cout << "registered " << sig.k << " bits for " << rg_image
              << " in " << sig.meta.steps << " steps, wrote " << path << "\n";
    std::cout << "message " << message_to_hex(sig.message) << "\n";
  });

  // --- extract -----------------------------------------------------------------
  auto* cmd_ext = app.add_subcommand(
      "extract", "recover a message from an image and its signature");
  std::string ex_data, ex_ckpt, ex_image, ex_sig, ex_profile = "identity";
  double ex_severity = 0.0;
  cmd_ext->add_option("--data", ex_data, "dataset directory")->required();
  cmd_ext->add_option("--checkpoint", ex_ckpt, "trained state")->required();
  cmd_ext->add_option("--image", ex_image, "image id")->required();
  cmd_ext->add_option("--sig", ex_sig, "signature file")->required();
  cmd_ext->add_option("--profile", ex_profile,
                      "distort before extracting (identity = none)");
  cmd_ext->add_option("--severity", ex_severity, "distortion severity");
  cmd_ext->callback([&] {
    RunConfig cfg = load_run_config(g);
    Dataset ds = ingest_for(cfg, g, ex_data, "manifest.json");
    Stack s(cfg);
    load_checkpoint(ex_ckpt, s.state, s.cfg_hash);

    WatermarkSignature sig = read_signature(ex_sig);
    Tensor img = ds.images[ds.index_of(ex_image)];
    if (ex_profile != "identity") {
      Rng rng(eval_seed(g, cfg));
      img = manual_augment(img, ex_profile, ex_severity, rng);
    }
    Tensor f = s.pipeline().embed(img);
    Message got = extract_message(sig, f, s.pipeline_hash());
    std::vector<double> conf = bit_confidences(sig, f);

    std::cout << "bits " << message_to_hex(got) << "\n";
    std::cout << "accuracy_vs_registered "
              << format_metric(bit_accuracy(sig.message, got)) << "\n";
    std::cout << "confidence";
    for (double p : conf) std::cout << " " << format_metric(p);
    std::cout << "\n";
  });

  // --- eval-invariance -----------------------------------------------------------
  auto* cmd_einv = app.add_subcommand(
      "eval-invariance", "per-profile cosine similarity table");
  std::string ei_data, ei_ckpt;
  double ei_severity = 0.5;
  int ei_n = 32;
  bool ei_svg = false;
  cmd_einv->add_option("--data", ei_data, "dataset directory")->required();
  cmd_einv->add_option("--checkpoint", ei_ckpt, "trained state")->required();
  cmd_einv->add_option("--severity", ei_severity, "severity budget in [0,1]");
  cmd_einv->add_option("--n", ei_n, "samples per profile");
  cmd_einv->add_flag("--svg", ei_svg, "also render a bar chart");
  cmd_einv->callback([&] {
    RunConfig cfg = load_run_config(g);
    Dataset ds = ingest_for(cfg, g, ei_data, "manifest.json");
    Stack s(cfg);
    load_checkpoint(ei_ckpt, s.state, s.cfg_hash);

    EvalReport r = eval_invariance(s.pipeline(), ds, ei_severity, ei_n,
                                   eval_seed(g, cfg), s.cfg_hash);
    fs::create_directories(g.out_dir);
    std::string path = (fs::path(g.out_dir) / "invariance.csv").string();
    write_report_csv(path, r);
    if (ei_svg) {
      write_report_svg((fs::path(g.out_dir) / "invariance.svg").string(), r,
                       0, 2);
    }
    std::cout << report_to_csv(r);
  });

  // --- eval-bits -------------------------------------------------------------------
  auto* cmd_ebit = app.add_subcommand(
      "eval-bits", "per-profile watermark bit accuracy table");
  std::string eb_data, eb_ckpt;
  std::vector<int> eb_ks{30};
  double eb_severity = 0.5;
  int eb_n = 8;
  cmd_ebit->add_option("--data", eb_data, "dataset directory")->required();
  cmd_ebit->add_option("--checkpoint", eb_ckpt, "trained state")->required();
  cmd_ebit->add_option("--k", eb_ks, "message lengths");
  cmd_ebit->add_option("--severity", eb_severity, "severity budget in [0,1]");
  cmd_ebit->add_option("--n", eb_n, "signatures per k");
  cmd_ebit->callback([&] {
    RunConfig cfg = load_run_config(g);
    Dataset ds = ingest_for(cfg, g, eb_data, "manifest.json");
    Stack s(cfg);
    load_checkpoint(eb_ckpt, s.state, s.cfg_hash);

    EvalReport r = eval_bits(s.pipeline(), ds, eb_ks, eb_severity, eb_n,
                             cfg.register_config(eval_seed(g, cfg)),
                             eval_seed(g, cfg), s.cfg_hash, s.pipeline_hash());
    fs::create_directories(g.out_dir);
    write_report_csv((fs::path(g.out_dir) / "bits.csv").string(), r);
    std::cout << report_to_csv(r);
  });

  // --- eval-ablation ------------------------------------------------------------------
  auto* cmd_eabl = app.add_subcommand(
      "eval-ablation", "learned vs manual augmentor comparison table");
  std::string ea_data, ea_learned, ea_manual, ea_manual_cfg;
  double ea_severity = 0.5;
  int ea_n = 8, ea_k = 30;
  cmd_eabl->add_option("--data", ea_data, "dataset directory")->required();
  cmd_eabl->add_option("--checkpoint-learned", ea_learned,
                       "learned-augmentor state")
      ->required();
  cmd_eabl->add_option("--checkpoint-manual", ea_manual,
                       "manual-augmentation state")
      ->required();
  cmd_eabl->add_option("--config-manual", ea_manual_cfg,
                       "config of the manual run (default: --config)");
  cmd_eabl->add_option("--severity", ea_severity, "severity budget in [0,1]");
  cmd_eabl->add_option("--n", ea_n, "samples per cell");
  cmd_eabl->add_option("--k", ea_k, "message length");
  cmd_eabl->callback([&] {
    RunConfig cfg = load_run_config(g);
    RunConfig cfg_m = ea_manual_cfg.empty() ? cfg : load_config(ea_manual_cfg);
    if (g.seed) cfg_m.train.seed = *g.seed;

    Dataset ds = ingest_for(cfg, g, ea_data, "manifest.json");
    Stack sl(cfg), sm(cfg_m);
    load_checkpoint(ea_learned, sl.state, sl.cfg_hash);
    load_checkpoint(ea_manual, sm.state, sm.cfg_hash);

    EvalReport r = eval_ablation_augmentor(
        sl.pipeline(), cfg.train, sm.pipeline(), cfg_m.train, ds, ea_severity,
        ea_n, ea_k, cfg.register_config(eval_seed(g, cfg)), eval_seed(g, cfg),
        sl.cfg_hash, sl.pipeline_hash(), sm.pipeline_hash());
    fs::create_directories(g.out_dir);
    write_report_csv((fs::path(g.out_dir) / "ablation.csv").string(), r);
    std::cout << report_to_csv(r);
  });

  // --- probe ---------------------------------------------------------------------------
  auto* cmd_probe = app.add_subcommand(
      "probe", "linear classifier on frozen invariant features");
  std::string pr_data, pr_ckpt;
  double pr_frac = 0.75, pr_severity = 0.5, pr_lr = 0.5;
  int pr_epochs = 300;
  cmd_probe->add_option("--data", pr_data, "dataset directory")->required();
  cmd_probe->add_option("--checkpoint", pr_ckpt, "trained state")->required();
  cmd_probe->add_option("--train-frac", pr_frac, "training split fraction");
  cmd_probe->add_option("--severity", pr_severity, "test-split distortion");
  cmd_probe->add_option("--epochs", pr_epochs, "descent epochs");
  cmd_probe->add_option("--lr", pr_lr, "descent step size");
  cmd_probe->callback([&] {
    RunConfig cfg = load_run_config(g);
    Dataset ds = ingest_for(cfg, g, pr_data, "manifest.json");
    Stack s(cfg);
    load_checkpoint(pr_ckpt, s.state, s.cfg_hash);

    EvalReport r = linear_probe(s.pipeline(), ds, pr_frac, pr_severity,
                                pr_epochs, pr_lr, eval_seed(g, cfg),
                                s.cfg_hash);
    fs::create_directories(g.out_dir);
    write_report_csv((fs::path(g.out_dir) / "probe.csv").string(), r);
    std::cout << report_to_csv(r);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const ConvergenceError& e) {
    std::cerr << "convergence error: " << e.what() << "\n";
    return 3;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
