// SPDX-License-Identifier: Apache-2.0
//
// amfmn: command-line front end (fixture, train, eval, query, locate,
// diagnose, margins).

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "amfmn/amfmn.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

std::vector<std::string> split_list(const std::string& s, char sep = ',') {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) {
    const auto b = item.find_first_not_of(' ');
    const auto e = item.find_last_not_of(' ');
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

std::ofstream open_out(const std::string& path) {
  if (const auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw amfmn::IoError("cannot write " + path);
  return os;
}

void write_json(const std::string& path, const ordered_json& j) {
  auto os = open_out(path);
  os << j.dump(2) << '\n';
  if (!os) throw amfmn::IoError("failed writing " + path);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

ordered_json report_json(const amfmn::RecallReport& r) {
  return {{"text_retrieval", {{"R@1", r.text_r1}, {"R@5", r.text_r5}, {"R@10", r.text_r10}}},
          {"image_retrieval", {{"R@1", r.image_r1}, {"R@5", r.image_r5}, {"R@10", r.image_r10}}},
          {"mR", amfmn::mean_recall(r)}};
}

std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

// --- fixture ---------------------------------------------------------------

struct FixtureArgs {
  std::uint64_t seed = 7;
  std::size_t images = 64;
  bool planted = false;
  std::string out;
  std::size_t image_size = 256;
  std::string scene;
};

int run_fixture(const FixtureArgs& a) {
  const auto fx = amfmn::make_fixture(a.seed, a.images, a.planted, a.image_size);
  amfmn::write_fixture(a.out, fx);
  std::cout << "wrote " << fx.entries.size() << " images to " << a.out << '\n';
  if (!a.scene.empty()) {
    const auto sc = amfmn::make_planted_scene(a.seed);
    amfmn::write_ppm(a.scene, sc.image);
    ordered_json side{{"query", sc.query},
                      {"keywords", sc.keywords},
                      {"target", {{"x", sc.x}, {"y", sc.y}, {"size", sc.size}}}};
    write_json(a.scene + ".json", side);
    std::cout << "wrote scene " << a.scene << " (target at " << sc.x << ',' << sc.y << ")\n";
  }
  return 0;
}

// --- train -----------------------------------------------------------------

struct TrainArgs {
  std::string data, out, history;
  std::string variant = "soft", loss = "dynamic", strategy = "hardest", mode = "joint", split = "holdout";
  double alpha = 0.2, gamma = 0.6, beta = 5.0;
  std::size_t epochs = 150, batch = 128, decay_every = 20;
  double lr = 1e-4, decay = 0.7, bleu_weight = amfmn::kDefaultBleuWeight;
  std::uint64_t seed = 1;
  amfmn::ModelConfig model;
  std::string channels = "4,8,16,32,64";
};

int run_train(TrainArgs a) {
  const auto ds = amfmn::load_dataset(a.data);
  auto& mc = a.model;
  mc.variant = amfmn::parse_variant(a.variant);
  mc.seed = a.seed;
  const auto ch = split_list(a.channels);
  if (ch.size() != mc.channels.size()) throw amfmn::ValidationError("--channels needs five comma-separated values");
  for (std::size_t i = 0; i < ch.size(); ++i) mc.channels[i] = std::stoul(ch[i]);
  mc.validate();

  amfmn::TrainConfig tc;
  tc.epochs = a.epochs;
  tc.batch_size = a.batch;
  tc.learning_rate = a.lr;
  tc.decay = a.decay;
  tc.decay_every = a.decay_every;
  tc.bleu_weight = a.bleu_weight;
  tc.mode = amfmn::parse_query_mode(a.mode);
  tc.seed = a.seed;
  const auto strategy = amfmn::parse_strategy(a.strategy);
  tc.margin = amfmn::parse_margin_mode(a.loss) == amfmn::MarginMode::fixed
                  ? amfmn::MarginParams::fixed(a.alpha, strategy)
                  : amfmn::MarginParams::dynamic(a.gamma, a.beta, strategy);
  tc.validate();

  std::vector<std::size_t> train_idx, val_idx;
  if (a.split == "all") {
    train_idx = all_indices(ds.size());
  } else if (a.split == "holdout") {
    const auto sp = amfmn::make_split(ds.size(), a.seed);
    train_idx = sp.train;
    val_idx = sp.val;
  } else {
    throw amfmn::ValidationError("--split must be holdout or all");
  }

  amfmn::Model model = amfmn::Model::create(mc, ds.build_vocabulary());
  const auto data = amfmn::prepare_training(model, ds, train_idx, val_idx, tc);

  const std::string history_path = a.history.empty() ? a.out + ".history.csv" : a.history;
  auto hist = open_out(history_path);
  hist << "epoch,learning_rate,train_loss,val_mR\n";
  amfmn::train(tc, data, model, [&](const amfmn::EpochRecord& r) {
    hist << r.epoch << ',' << fmt(r.learning_rate) << ',' << fmt(r.train_loss) << ','
         << (std::isnan(r.val_mr) ? std::string() : fmt(r.val_mr)) << '\n';
    std::cout << "epoch " << r.epoch << " loss " << fmt(r.train_loss);
    if (!std::isnan(r.val_mr)) std::cout << " val_mR " << fmt(r.val_mr);
    std::cout << '\n';
  });

  amfmn::Checkpoint ck{std::move(model), nlohmann::json::object()};
  ck.metadata = {{"split", a.split},
                 {"split_seed", a.seed},
                 {"dataset_images", ds.size()},
                 {"train_hash", amfmn::split_hash(train_idx)},
                 {"loss", a.loss},
                 {"alpha", a.alpha},
                 {"gamma", a.gamma},
                 {"beta", a.beta},
                 {"strategy", a.strategy},
                 {"epochs", a.epochs},
                 {"batch", a.batch},
                 {"learning_rate", a.lr},
                 {"mode", a.mode}};
  amfmn::save_checkpoint(a.out, ck);
  std::cout << "saved " << a.out << '\n';
  return 0;
}

// --- eval ------------------------------------------------------------------

struct EvalArgs {
  std::string data, ckpt, mode = "joint", report, csv, split = "auto", variant;
};

int run_eval(const EvalArgs& a) {
  std::optional<amfmn::VgaVariant> expected;
  if (!a.variant.empty()) expected = amfmn::parse_variant(a.variant);
  const auto ck = amfmn::load_checkpoint(a.ckpt, expected);
  const auto ds = amfmn::load_dataset(a.data);

  std::string split = a.split;
  if (split == "auto") split = ck.metadata.value("split", std::string("all")) == "holdout" ? "test" : "all";
  std::vector<std::size_t> idx;
  if (split == "all") {
    idx = all_indices(ds.size());
  } else if (split == "test" || split == "val" || split == "train") {
    const auto sp = amfmn::make_split(ds.size(), ck.metadata.value("split_seed", std::uint64_t{1}));
    idx = split == "test" ? sp.test : split == "val" ? sp.val : sp.train;
  } else {
    throw amfmn::ValidationError("--split must be auto, all, train, val or test");
  }

  const auto mode = amfmn::parse_query_mode(a.mode);
  const auto r = amfmn::evaluate(ck.model, ds, idx, mode);
  ordered_json j = report_json(r);
  j["mode"] = a.mode;
  j["variant"] = std::string(amfmn::to_string(ck.model.config.variant));
  j["split"] = split;
  j["split_hash"] = amfmn::split_hash(idx);
  j["images"] = idx.size();
  j["captions"] = idx.size() * amfmn::kSentencesPerImage;
  write_json(a.report, j);

  const std::string csv_path = a.csv.empty() ? a.report + ".csv" : a.csv;
  auto os = open_out(csv_path);
  os << "variant,mode,split,text_R1,text_R5,text_R10,image_R1,image_R5,image_R10,mR\n";
  os << amfmn::to_string(ck.model.config.variant) << ',' << a.mode << ',' << split;
  for (double v : r.values()) os << ',' << fmt(v);
  os << ',' << fmt(amfmn::mean_recall(r)) << '\n';
  std::cout << j.dump(2) << '\n';
  return 0;
}

// --- query -----------------------------------------------------------------

struct QueryArgs {
  std::string ckpt, corpus, text, keywords, mode = "joint", out;
  std::size_t topk = 10;
};

int run_query(const QueryArgs& a) {
  const auto ck = amfmn::load_checkpoint(a.ckpt);
  const auto ds = amfmn::load_dataset(a.corpus);
  const auto mode = amfmn::parse_query_mode(a.mode);
  const auto q = amfmn::encode_query(ck.model, a.text, split_list(a.keywords), mode, ds.keyword_vocabulary());
  const auto idx = all_indices(ds.size());
  const auto visuals = amfmn::encode_images(ck.model, ds, idx);
  std::vector<double> scores;
  for (const auto& v : visuals) scores.push_back(ck.model.score(v, q));
  const auto order = amfmn::rank(scores);

  ordered_json results = ordered_json::array();
  for (std::size_t r = 0; r < std::min(a.topk, order.size()); ++r) {
    const auto& e = ds.entries[order[r]];
    results.push_back({{"rank", r + 1}, {"id", e.id}, {"image", e.image}, {"score", scores[order[r]]}});
    std::cout << r + 1 << '\t' << e.id << '\t' << fmt(scores[order[r]]) << '\n';
  }
  if (!a.out.empty()) {
    write_json(a.out, {{"text", a.text}, {"keywords", split_list(a.keywords)}, {"mode", a.mode}, {"results", results}});
  }
  return 0;
}

// --- locate ----------------------------------------------------------------

struct LocateArgs {
  std::string ckpt, scene, query, keywords, scales = "128,256,512", out, mode = "joint";
  std::size_t median = 3, passes = 1;
  bool axis_offsets = false;
};

int run_locate(const LocateArgs& a) {
  const auto ck = amfmn::load_checkpoint(a.ckpt);
  const auto scene = amfmn::read_pnm(a.scene);
  amfmn::LocateOptions opt;
  opt.scales.clear();
  for (const auto& s : split_list(a.scales)) opt.scales.push_back(std::stoul(s));
  opt.median = a.median;
  opt.passes = a.passes;
  opt.tiling.axis_offsets = a.axis_offsets;

  std::set<std::string> keyword_vocab;
  for (const auto& k : split_list(a.keywords))
    for (const auto& t : amfmn::tokenize(k)) keyword_vocab.insert(t);
  const auto q = amfmn::encode_query(ck.model, a.query, split_list(a.keywords), amfmn::parse_query_mode(a.mode),
                                     keyword_vocab);
  const auto loc = amfmn::locate(scene, q, ck.model, opt);
  for (const auto& w : loc.warnings) std::cerr << "warning: " << w << '\n';

  amfmn::HeatmapInfo info{opt.scales, loc.tiles, opt.median, opt.passes, a.query};
  amfmn::emit_heatmap(loc.filtered, a.out, info);
  const auto [x, y] = amfmn::argmax_pixel(loc.filtered);
  std::cout << "tiles " << loc.tiles.size() << " peak " << x << ',' << y << '\n';
  return 0;
}

// --- diagnose --------------------------------------------------------------

struct DiagnoseArgs {
  std::string data, out, matrix, pgm;
  std::size_t sample = 200;
  double bleu_weight = amfmn::kDefaultBleuWeight;
};

int run_diagnose(const DiagnoseArgs& a) {
  const auto ds = amfmn::load_dataset(a.data);
  const auto r = amfmn::similarity_diagnostic(ds, a.sample, a.bleu_weight);
  const std::string matrix_path = a.matrix.empty() ? a.out + ".matrix.csv" : a.matrix;

  ordered_json j;
  j["images"] = ds.size();
  j["captions"] = ds.caption_count();
  j["diversity"] = r.diversity;
  j["average_similarity"] = r.average_similarity;
  j["vocabulary_size"] = r.vocabulary_size;
  j["categories"] = r.categories;
  j["sampled_captions"] = r.row_caption.size();
  j["bleu_weight"] = a.bleu_weight;
  j["matrix"] = matrix_path;
  write_json(a.out, j);

  auto os = open_out(matrix_path);
  os << "caption,image";
  for (const auto& e : ds.entries) os << ',' << e.id;
  os << '\n';
  for (std::size_t row = 0; row < r.row_caption.size(); ++row) {
    os << r.row_caption[row] << ',' << ds.entries[r.row_image[row]].id;
    for (std::size_t c = 0; c < ds.size(); ++c) os << ',' << fmt(r.matrix.at(row, c));
    os << '\n';
  }
  if (!a.pgm.empty()) amfmn::write_pgm(a.pgm, r.matrix);
  std::cout << "diversity " << fmt(r.diversity) << " average_similarity " << fmt(r.average_similarity) << '\n';
  return 0;
}

// --- margins ---------------------------------------------------------------

struct MarginsArgs {
  double gamma = 0.5, beta = 4.0;
  std::size_t samples = 101;
  std::string out;
};

int run_margins(const MarginsArgs& a) {
  amfmn::MarginParams::dynamic(a.gamma, a.beta).validate();
  const auto curve = amfmn::margin_curve(a.gamma, a.beta, a.samples);
  auto os = open_out(a.out);
  os << "prior,margin\n";
  char buf[64];
  for (const auto& p : curve) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", p.prior, p.margin);
    os << buf;
  }
  if (!os) throw amfmn::IoError("failed writing " + a.out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-modal remote sensing retrieval toolkit"};
  app.require_subcommand(1);
  std::uint64_t unused_seed = 0;

  FixtureArgs fx;
  auto* c_fixture = app.add_subcommand("fixture", "generate a synthetic dataset");
  c_fixture->add_option("--seed", fx.seed);
  c_fixture->add_option("--images", fx.images, "number of images");
  c_fixture->add_flag("--planted", fx.planted, "every caption identifies its image");
  c_fixture->add_option("--out", fx.out)->required();
  c_fixture->add_option("--image-size", fx.image_size);
  c_fixture->add_option("--scene", fx.scene, "also write a planted localization scene (PPM)");

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "train the projection heads");
  c_train->add_option("--data", tr.data)->required();
  c_train->add_option("--out", tr.out, "checkpoint path")->required();
  c_train->add_option("--variant", tr.variant, "soft|fusion|sim");
  c_train->add_option("--loss", tr.loss, "fixed|dynamic");
  c_train->add_option("--alpha", tr.alpha, "fixed margin");
  c_train->add_option("--gamma", tr.gamma, "maximum dynamic margin");
  c_train->add_option("--beta", tr.beta, "dynamic margin decay");
  c_train->add_option("--strategy", tr.strategy, "all|hardest");
  c_train->add_option("--epochs", tr.epochs);
  c_train->add_option("--seed", tr.seed);
  c_train->add_option("--batch", tr.batch);
  c_train->add_option("--lr", tr.lr);
  c_train->add_option("--decay", tr.decay);
  c_train->add_option("--decay-every", tr.decay_every);
  c_train->add_option("--bleu-weight", tr.bleu_weight);
  c_train->add_option("--mode", tr.mode, "sentence|keywords|joint");
  c_train->add_option("--split", tr.split, "holdout (80/10/10) or all");
  c_train->add_option("--history", tr.history, "loss history CSV (default <out>.history.csv)");
  c_train->add_option("--image-size", tr.model.image_size);
  c_train->add_option("--channels", tr.channels, "five stage widths");
  c_train->add_option("--visual-dim", tr.model.visual_dim);
  c_train->add_option("--word-dim", tr.model.word_dim);
  c_train->add_option("--hidden", tr.model.hidden);
  c_train->add_option("--joint-dim", tr.model.joint_dim);
  c_train->add_option("--low-channels", tr.model.low_channels);
  c_train->add_option("--high-channels", tr.model.high_channels);
  c_train->add_option("--info-channels", tr.model.info_channels);

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "R@K and mR of a checkpoint");
  c_eval->add_option("--data", ev.data)->required();
  c_eval->add_option("--ckpt", ev.ckpt)->required();
  c_eval->add_option("--mode", ev.mode, "sentence|keywords|joint");
  c_eval->add_option("--report", ev.report)->required();
  c_eval->add_option("--csv", ev.csv, "CSV row (default <report>.csv)");
  c_eval->add_option("--split", ev.split, "auto|all|train|val|test");
  c_eval->add_option("--variant", ev.variant, "reject checkpoints of another variant");
  c_eval->add_option("--seed", unused_seed);

  QueryArgs qa;
  auto* c_query = app.add_subcommand("query", "rank corpus images for a text");
  c_query->add_option("--ckpt", qa.ckpt)->required();
  c_query->add_option("--corpus", qa.corpus)->required();
  c_query->add_option("--text", qa.text)->required();
  c_query->add_option("--keywords", qa.keywords, "comma-separated phrases");
  c_query->add_option("--topk", qa.topk);
  c_query->add_option("--mode", qa.mode);
  c_query->add_option("--out", qa.out, "results JSON");
  c_query->add_option("--seed", unused_seed);

  LocateArgs la;
  auto* c_locate = app.add_subcommand("locate", "probability map of a query over a large scene");
  c_locate->add_option("--ckpt", la.ckpt)->required();
  c_locate->add_option("--scene", la.scene)->required();
  c_locate->add_option("--query", la.query)->required();
  c_locate->add_option("--keywords", la.keywords);
  c_locate->add_option("--scales", la.scales);
  c_locate->add_option("--median", la.median);
  c_locate->add_option("--passes", la.passes);
  c_locate->add_flag("--axis-offsets", la.axis_offsets, "add x-only and y-only half-offset rounds");
  c_locate->add_option("--mode", la.mode);
  c_locate->add_option("--out", la.out)->required();
  c_locate->add_option("--seed", unused_seed);

  DiagnoseArgs da;
  auto* c_diag = app.add_subcommand("diagnose", "dataset diversity and caption similarity");
  c_diag->add_option("--data", da.data)->required();
  c_diag->add_option("--sample", da.sample);
  c_diag->add_option("--out", da.out)->required();
  c_diag->add_option("--matrix", da.matrix, "matrix CSV (default <out>.matrix.csv)");
  c_diag->add_option("--pgm", da.pgm, "grayscale render of the matrix");
  c_diag->add_option("--bleu-weight", da.bleu_weight);
  c_diag->add_option("--seed", unused_seed);

  MarginsArgs ma;
  auto* c_margins = app.add_subcommand("margins", "sample the dynamic margin curve");
  c_margins->add_option("--gamma", ma.gamma);
  c_margins->add_option("--beta", ma.beta);
  c_margins->add_option("--samples", ma.samples);
  c_margins->add_option("--out", ma.out)->required();
  c_margins->add_option("--seed", unused_seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*c_fixture) return run_fixture(fx);
    if (*c_train) return run_train(tr);
    if (*c_eval) return run_eval(ev);
    if (*c_query) return run_query(qa);
    if (*c_locate) return run_locate(la);
    if (*c_diag) return run_diagnose(da);
    if (*c_margins) return run_margins(ma);
  } catch (const amfmn::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const amfmn::Error& e) {
    // Bad shapes, unreadable or malformed inputs: the caller's data is at fault.
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: bad numeric value (" << e.what() << ")\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
