// SPDX-License-Identifier: Apache-2.0
#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "spfuse/harness.hpp"
#include "spfuse/synthdata.hpp"

namespace fs = std::filesystem;
using namespace spfuse;

namespace {

// One-line help text per config key, shown next to each override flag.
const char* config_key_help(const std::string& key) {
  static const std::map<std::string, const char*> help = {
      {"epochs", "training epochs"},
      {"lr", "initial learning rate (cosine-annealed to 0)"},
      {"momentum", "SGD momentum"},
      {"weight_decay", "L2 weight decay on all trainable parameters"},
      {"batch_size", "scenes per optimizer step"},
      {"precision", "scalar width: 32 or 64"},
      {"seed", "run seed (init, shuffling, augmentation)"},
      {"lambda_seg2d", "weight of the 2D segmentation loss"},
      {"lambda_xm", "weight of the cross-modal KL loss"},
      {"lambda_gram", "weight of the Gram alignment loss"},
      {"lambda_diff", "weight of the private decorrelation loss"},
      {"augment_rotation", "random rotation about the vertical axis"},
      {"augment_flip", "random mirror flip"},
      {"augment_scale", "random uniform scale in [0.95, 1.05]"},
      {"fusion_mode", "shared_private or kl_only"},
      {"query_direction", "SAF queries: q3d_k2d, q2d_k3d or bidirectional"},
      {"fusion_form", "SAF output: gated or scalar_blend"},
      {"kl_mode", "cross-modal KL: as_written or symmetric"},
      {"kl_swap", "swap the KL argument order"},
      {"n_classes", "semantic classes (fixed vocabulary prefix)"},
      {"image_h", "camera image height in pixels"},
      {"image_w", "camera image width in pixels"},
      {"d_hidden", "encoder feature width"},
      {"n_blocks_3d", "3D encoder blocks"},
      {"n_heads", "attention heads"},
      {"voxel_size", "3D voxel edge length"},
      {"patch_size_2d", "2D patch edge length in pixels"},
      {"freeze_2d", "freeze the 2D encoder backbone"},
      {"d_decomp", "shared/private subspace width"},
      {"d_attn", "SAF attention width"},
      {"d_fused", "fused feature width"},
      {"seg_hidden", "3D segmentation head hidden width"},
  };
  auto it = help.find(key);
  return it == help.end() ? "" : it->second;
}

// Registers one string flag per config key into `store`; only keys the user
// actually passed are applied later, so flags win over the config file.
void add_config_flags(CLI::App* cmd, std::map<std::string, std::string>& store) {
  const TrainConfig defaults;
  for (const auto& [key, value] : train_config_items(defaults)) {
    std::string desc = std::string(config_key_help(key)) + " [" + value + "]";
    cmd->add_option("--" + key, store[key], desc);
  }
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

// Plain key=value lines; blank lines and # comments ignored.
std::vector<std::pair<std::string, std::string>> read_config_file(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError("cannot open config file: " + p.string());
  std::vector<std::pair<std::string, std::string>> items;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ValidationError("config file " + p.string() + ":" +
                            std::to_string(lineno) + ": expected key=value");
    items.emplace_back(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return items;
}

// Defaults, then the config file, then explicitly passed flags.
TrainConfig resolve_config(const CLI::App* cmd, const std::string& config_path,
                           const std::map<std::string, std::string>& flags) {
  TrainConfig cfg;
  if (!config_path.empty())
    for (const auto& [k, v] : read_config_file(config_path)) train_config_set(cfg, k, v);
  for (const auto& [k, v] : flags)
    if (cmd->count("--" + k) > 0) train_config_set(cfg, k, v);
  return cfg;
}

void write_metrics_files(const SegMetrics& m, const std::vector<std::string>& names,
                         const fs::path& dir) {
  fs::create_directories(dir);
  write_metrics_csv(m, names, dir / "metrics.csv");
  write_metrics_json(m, dir / "metrics.json");
}

int cmd_gen_data(const std::string& out, int scenes, const SceneConfig& sc) {
  if (scenes <= 0) throw ValidationError("gen-data: --scenes must be positive");
  const Dataset ds = generate_dataset(scenes, sc);
  save_dataset(ds, out);
  std::printf("RESULT scenes=%d n_points=%d n_classes=%d style=%s out=%s\n", scenes,
              sc.n_points, sc.n_classes, to_string(sc.domain_style).c_str(),
              out.c_str());
  return 0;
}

int cmd_train(const TrainConfig& cfg, const std::string& data,
              const std::string& val_data, const std::string& out) {
  const Dataset train_set = load_dataset(data);
  const Dataset val_set =
      (val_data.empty() || val_data == data) ? train_set : load_dataset(val_data);
  const TrainReport rep = train(cfg, train_set, val_set, out);
  std::printf("RESULT miou=%.6f diverged=%d epochs_completed=%d wall_s=%.1f checkpoint=%s\n",
              rep.val_metrics.miou, rep.diverged ? 1 : 0, rep.epochs_completed,
              rep.wall_seconds, rep.checkpoint_path.c_str());
  return rep.diverged ? 1 : 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data,
             const std::string& out) {
  const Dataset ds = load_dataset(data);
  const SegMetrics m = evaluate(ckpt, ds);
  const fs::path dir = out.empty() ? fs::path(ckpt).parent_path() : fs::path(out);
  write_metrics_files(m, ds.class_names, dir);
  std::printf("RESULT miou=%.6f n_evaluated=%lld n_ignored=%lld metrics=%s\n", m.miou,
              static_cast<long long>(m.n_evaluated),
              static_cast<long long>(m.n_ignored), (dir / "metrics.csv").string().c_str());
  return 0;
}

AblationRow parse_row(const TrainConfig& base, const std::string& spec) {
  AblationRow row;
  row.config = base;
  const auto colon = spec.find(':');
  row.name = colon == std::string::npos ? spec : spec.substr(0, colon);
  if (colon != std::string::npos) {
    std::string rest = spec.substr(colon + 1);
    std::size_t pos = 0;
    while (pos <= rest.size()) {
      const auto comma = rest.find(',', pos);
      const std::string piece =
          trim(rest.substr(pos, comma == std::string::npos ? rest.size() - pos
                                                           : comma - pos));
      if (!piece.empty()) {
        const auto eq = piece.find('=');
        if (eq == std::string::npos)
          throw ValidationError("ablate: row override must be key=value: " + piece);
        train_config_set(row.config, trim(piece.substr(0, eq)),
                         trim(piece.substr(eq + 1)));
      }
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
  }
  return row;
}

int cmd_ablate(const TrainConfig& base, const std::vector<std::string>& row_specs,
               int seeds, const std::string& data, const std::string& val_data,
               const std::string& out) {
  const Dataset train_set = load_dataset(data);
  const Dataset val_set =
      (val_data.empty() || val_data == data) ? train_set : load_dataset(val_data);
  std::vector<AblationRow> grid;
  if (row_specs.empty()) {
    grid.push_back(parse_row(base, "shared_private:fusion_mode=shared_private"));
    grid.push_back(parse_row(base, "kl_only:fusion_mode=kl_only"));
  } else {
    for (const auto& spec : row_specs) grid.push_back(parse_row(base, spec));
  }
  const AblationResult res = ablate(grid, seeds, train_set, val_set, out);
  std::size_t best = 0;
  int diverged_runs = 0;
  for (std::size_t i = 0; i < res.rows.size(); ++i) {
    diverged_runs += res.rows[i].n_diverged;
    if (res.rows[i].mean_miou > res.rows[best].mean_miou) best = i;
  }
  std::printf("RESULT rows=%zu seeds=%d best=%s best_mean_miou=%.6f diverged_runs=%d csv=%s\n",
              res.rows.size(), seeds, res.rows[best].name.c_str(),
              res.rows[best].mean_miou, diverged_runs, res.csv_path.c_str());
  return 0;
}

int cmd_domain_shift(const std::string& ckpt, const std::string& source_data,
                     const std::string& target_data, const std::string& out) {
  const Dataset source = load_dataset(source_data);
  const Dataset target = load_dataset(target_data);
  const DomainShiftResult r = domain_shift_eval(ckpt, source, target);
  if (!out.empty()) {
    write_metrics_files(r.source, source.class_names, fs::path(out) / "source");
    write_metrics_files(r.target, target.class_names, fs::path(out) / "target");
  }
  std::printf("RESULT miou_source=%.6f miou_target=%.6f drop=%.6f\n", r.source.miou,
              r.target.miou, r.drop);
  return 0;
}

int cmd_gradcheck(const TrainConfig& cfg) {
  const GradcheckReport rep = gradcheck(cfg.model, cfg.loss_weights);
  for (const auto& row : rep.rows) {
    if (row.no_gradient)
      std::fprintf(stderr, "%-10s %-7s no gradient (frozen)\n", row.group.c_str(),
                   row.term.c_str());
    else
      std::fprintf(stderr, "%-10s %-7s max_rel %.3e%s\n", row.group.c_str(),
                   row.term.c_str(), row.max_rel,
                   row.max_rel > kGradcheckFail ? "  FAIL" : "");
  }
  std::printf("RESULT max_rel_err=%.3e pass=%d worst_group=%s worst_term=%s\n",
              rep.worst, rep.passed ? 1 : 0,
              rep.worst_group.empty() ? "-" : rep.worst_group.c_str(),
              rep.worst_term.empty() ? "-" : rep.worst_term.c_str());
  return rep.passed ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Shared-private multimodal fusion for joint 2D-3D segmentation"};
  app.require_subcommand(1);
  int rc = 0;

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic paired dataset");
  std::string gen_out;
  int gen_scenes = 0;
  SceneConfig sc;
  std::string gen_style = to_string(sc.domain_style);
  std::uint64_t gen_seed = 0;
  gen->add_option("--out", gen_out, "output dataset directory")->required();
  gen->add_option("--scenes", gen_scenes, "number of scenes")->required();
  gen->add_option("--seed", gen_seed, "base seed (scene i uses seed+i) [0]");
  gen->add_option("--style", gen_style, "domain style: source or target [source]");
  gen->add_option("--points", sc.n_points, "LiDAR points per scene [4096]");
  gen->add_option("--image-h", sc.image_h, "image height [96]");
  gen->add_option("--image-w", sc.image_w, "image width [128]");
  gen->add_option("--classes", sc.n_classes, "number of classes [6]");
  gen->add_option("--objects-min", sc.objects_min, "min objects per scene [5]");
  gen->add_option("--objects-max", sc.objects_max, "max objects per scene [8]");
  gen->add_option("--noise-sigma", sc.noise_sigma, "point jitter sigma [0.02]");
  gen->add_option("--patch-divisor", sc.patch_divisor,
                  "image sides must divide by this [8]");
  gen->callback([&] {
    sc.seed = gen_seed;
    sc.domain_style = domain_style_from_string(gen_style);
    rc = cmd_gen_data(gen_out, gen_scenes, sc);
  });

  // train
  auto* tr = app.add_subcommand("train", "Train the fusion model");
  std::string tr_config, tr_data, tr_val, tr_out;
  tr->add_option("--config", tr_config, "key=value config file");
  tr->add_option("--data", tr_data, "training dataset directory")->required();
  tr->add_option("--val-data", tr_val, "validation dataset directory [--data]");
  tr->add_option("--out", tr_out, "run output directory")->required();
  std::map<std::string, std::string> tr_flags;
  add_config_flags(tr, tr_flags);
  tr->callback([&] {
    rc = cmd_train(resolve_config(tr, tr_config, tr_flags), tr_data, tr_val, tr_out);
  });

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  std::string ev_ckpt, ev_data, ev_out;
  ev->add_option("--ckpt", ev_ckpt, "checkpoint file")->required();
  ev->add_option("--data", ev_data, "dataset directory")->required();
  ev->add_option("--out", ev_out, "metrics output directory [checkpoint directory]");
  ev->callback([&] { rc = cmd_eval(ev_ckpt, ev_data, ev_out); });

  // ablate
  auto* ab = app.add_subcommand("ablate", "Train a configuration grid over seeds");
  std::string ab_config, ab_data, ab_val, ab_out;
  int ab_seeds = 3;
  std::vector<std::string> ab_rows;
  ab->add_option("--config", ab_config, "base key=value config file");
  ab->add_option("--data", ab_data, "training dataset directory")->required();
  ab->add_option("--val-data", ab_val, "validation dataset directory [--data]");
  ab->add_option("--out", ab_out, "grid output directory")->required();
  ab->add_option("--seeds", ab_seeds, "seeds per row (base seed from config) [3]");
  ab->add_option("--row", ab_rows,
                 "grid row NAME[:key=value,...]; default grid compares "
                 "shared_private vs kl_only. Divergent runs are recorded in the "
                 "CSV, not fatal");
  std::map<std::string, std::string> ab_flags;
  add_config_flags(ab, ab_flags);
  ab->callback([&] {
    rc = cmd_ablate(resolve_config(ab, ab_config, ab_flags), ab_rows, ab_seeds,
                    ab_data, ab_val, ab_out);
  });

  // domain-shift
  auto* ds = app.add_subcommand("domain-shift",
                                "Evaluate a checkpoint on source and target domains");
  std::string ds_ckpt, ds_source, ds_target, ds_out;
  ds->add_option("--ckpt", ds_ckpt, "checkpoint file")->required();
  ds->add_option("--source-data", ds_source, "source-domain dataset")->required();
  ds->add_option("--target-data", ds_target, "target-domain dataset")->required();
  ds->add_option("--out", ds_out, "metrics output directory");
  ds->callback([&] { rc = cmd_domain_shift(ds_ckpt, ds_source, ds_target, ds_out); });

  // gradcheck
  auto* gc = app.add_subcommand(
      "gradcheck", "Verify analytic gradients on a fixed micro-scene (64-bit)");
  std::string gc_config;
  gc->add_option("--config", gc_config, "key=value config file");
  std::map<std::string, std::string> gc_flags;
  add_config_flags(gc, gc_flags);
  gc->callback([&] { rc = cmd_gradcheck(resolve_config(gc, gc_config, gc_flags)); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const DivergenceError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return rc;
}
