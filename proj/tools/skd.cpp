// Command-line front end: gen, train, eval, swap, sample, spectrum, identify.

#include "skd/error.hpp"
#include "skd/metrics.hpp"
#include "skd/persist.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace {

using namespace skd;

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw Error("failed writing '" + path + "'");
}

RunConfig config_or_default(const std::string& path) { return path.empty() ? RunConfig{} : load_run_config(path); }

const SequenceBatch& pick_split(const DatasetSplit& data, const std::string& split) {
  if (split == "train") return data.train;
  if (split == "test") return data.test;
  throw ConfigError("split", "expected train or test, got '" + split + "'");
}

std::string first_static_factor(const SequenceBatch& b) {
  for (const auto& f : b.factors) {
    if (f.kind == FactorKind::static_factor) return f.name;
  }
  throw ConfigError("static_label", "dataset has no static factor");
}

std::string spectrum_csv(const KoopmanSpectrum& spectrum, const SpectralPartition& partition) {
  std::vector<std::string> role(std::size_t(spectrum.dim()), "dynamic");
  for (auto i : partition.stat) role[i] = "static";
  std::ostringstream out;
  out << "index,re,im,modulus,dist_to_one,partition\n";
  for (Index i = 0; i < spectrum.dim(); ++i) {
    const Complex v = spectrum.values()(i);
    out << i << ',' << fmt(v.real()) << ',' << fmt(v.imag()) << ',' << fmt(std::abs(v)) << ','
        << fmt(std::abs(v - 1.0)) << ',' << role[std::size_t(i)] << '\n';
  }
  return out.str();
}

Json summary_json(const ScoreSummary& s) {
  return Json{{"acc", s.acc}, {"is", s.is}, {"h_y_given_x", s.h_y_given_x}, {"h_y", s.h_y}};
}

// Index set for a factor name: "static"/"dynamic" name the spectral
// partition, anything else is searched for with the judge.
std::vector<std::size_t> factor_indices(const std::string& name, const Model& model, const SequenceBatch& batch,
                                        const SpectralPartition& partition, const EvalConfig& eval,
                                        std::optional<Judge>& judge, const DatasetSplit& data) {
  if (name == "static") return partition.stat;
  if (name == "dynamic") return partition.dyn;
  if (!judge) judge = train_judge(data.train, eval.judge);
  const auto id = identify_factor_subspace(model, batch, *judge, name, eval.identify);
  if (!id.identified) throw PreconditionError("factor '" + name + "' not identified: " + id.reason);
  return id.indices;
}

struct Common {
  std::string config;
  std::string ckpt;
  std::string data;
  std::string split = "test";
};

int run(int argc, char** argv) {
  CLI::App app{"Spectral Koopman disentanglement toolkit"};
  app.require_subcommand(1);

  // gen
  std::string gen_dataset, gen_config, gen_out;
  std::optional<std::uint64_t> gen_seed;
  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset container");
  gen->add_option("--dataset", gen_dataset, "toy-sprites | oscillators");
  gen->add_option("--config", gen_config, "run configuration JSON");
  gen->add_option("--seed", gen_seed, "override dataset.seed");
  gen->add_option("--out", gen_out, "output container")->required();

  // train
  std::string train_config, train_data, train_out, train_log;
  std::optional<std::uint64_t> train_seed;
  std::optional<std::size_t> train_epochs;
  auto* trn = app.add_subcommand("train", "train a model and write a checkpoint");
  trn->add_option("--config", train_config, "run configuration JSON");
  trn->add_option("--data", train_data, "dataset container")->required();
  trn->add_option("--out", train_out, "checkpoint container")->required();
  trn->add_option("--log", train_log, "per-epoch loss CSV");
  trn->add_option("--seed", train_seed, "override model.seed");
  trn->add_option("--epochs", train_epochs, "override model.epochs");

  // eval
  Common ev;
  std::string eval_protocol, eval_json;
  std::optional<std::size_t> eval_epochs;
  std::optional<std::uint64_t> eval_seed;
  auto* evl = app.add_subcommand("eval", "generation metrics and EER");
  evl->add_option("--config", ev.config, "run configuration JSON (eval section)");
  evl->add_option("--ckpt", ev.ckpt, "checkpoint container")->required();
  evl->add_option("--data", ev.data, "dataset container")->required();
  evl->add_option("--protocol", eval_protocol, "fix-dynamic-sample-static | fix-static-sample-dynamic");
  evl->add_option("--json", eval_json, "metrics output")->required();
  evl->add_option("--epochs", eval_epochs, "override eval.epochs");
  evl->add_option("--seed", eval_seed, "override eval.seed");

  // swap
  Common sw;
  std::size_t swap_src = 0, swap_tgt = 0;
  std::string swap_list, swap_out;
  auto* swp = app.add_subcommand("swap", "exchange factor coefficients between two sequences");
  swp->add_option("--config", sw.config, "run configuration JSON (eval section)");
  swp->add_option("--ckpt", sw.ckpt, "checkpoint container")->required();
  swp->add_option("--data", sw.data, "dataset container")->required();
  swp->add_option("--split", sw.split, "train | test");
  swp->add_option("--src", swap_src, "first sample index")->required();
  swp->add_option("--tgt", swap_tgt, "second sample index")->required();
  swp->add_option("--factors", swap_list, "comma-separated factor names, or static/dynamic")->required();
  swp->add_option("--out", swap_out, "output sequences container")->required();

  // sample
  Common sm;
  std::string sample_subspace = "static", sample_out;
  std::uint64_t sample_seed = 0;
  auto* smp = app.add_subcommand("sample", "convex-hull sampling of one subspace");
  smp->add_option("--config", sm.config, "run configuration JSON");
  smp->add_option("--ckpt", sm.ckpt, "checkpoint container")->required();
  smp->add_option("--data", sm.data, "dataset container")->required();
  smp->add_option("--split", sm.split, "train | test");
  smp->add_option("--subspace", sample_subspace, "static | dynamic");
  smp->add_option("--seed", sample_seed, "sampling seed");
  smp->add_option("--out", sample_out, "output sequences container")->required();

  // spectrum
  Common sp;
  std::string spectrum_out;
  auto* spc = app.add_subcommand("spectrum", "write the operator spectrum as CSV");
  spc->add_option("--ckpt", sp.ckpt, "checkpoint container")->required();
  spc->add_option("--data", sp.data, "dataset container")->required();
  spc->add_option("--split", sp.split, "train | test");
  spc->add_option("--csv", spectrum_out, "output CSV")->required();

  // identify
  Common idf;
  std::string identify_factor, identify_json;
  auto* idn = app.add_subcommand("identify", "search the static subspace of one factor");
  idn->add_option("--config", idf.config, "run configuration JSON (eval section)");
  idn->add_option("--ckpt", idf.ckpt, "checkpoint container")->required();
  idn->add_option("--data", idf.data, "dataset container")->required();
  idn->add_option("--split", idf.split, "train | test");
  idn->add_option("--factor", identify_factor, "factor name")->required();
  idn->add_option("--json", identify_json, "output JSON")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  if (gen->parsed()) {
    RunConfig cfg = config_or_default(gen_config);
    if (!gen_dataset.empty()) cfg.dataset.dataset = gen_dataset;
    if (gen_seed) cfg.dataset.seed = *gen_seed;
    const auto data = generate(cfg.dataset);
    write_container(gen_out, dataset_container(data, cfg.dataset));
    std::cout << "wrote " << data.train.samples() << " train / " << data.test.samples() << " test sequences to "
              << gen_out << '\n';
    return kExitOk;
  }

  if (trn->parsed()) {
    RunConfig cfg = config_or_default(train_config);
    const auto data = dataset_from_container(read_container(train_data));
    ModelConfig mc = cfg.model;
    if (mc.m != 0 && mc.m != data.train.dim()) {
      throw ConfigError("model.m", "config says " + std::to_string(mc.m) + " but the data has " +
                                       std::to_string(data.train.dim()));
    }
    mc.m = data.train.dim();
    mc.output_range = data.train.range;
    if (train_seed) mc.seed = *train_seed;
    if (train_epochs) mc.epochs = *train_epochs;
    std::ostringstream log;
    log << "epoch,L,L_rec,L_pred,L_stat,L_dyn\n";
    try {
      const auto ckpt = train(mc, data.train.frames, [&](const EpochRecord& r) {
        log << r.epoch << ',' << fmt(r.loss.total) << ',' << fmt(r.loss.rec) << ',' << fmt(r.loss.pred) << ','
            << fmt(r.loss.stat) << ',' << fmt(r.loss.dyn) << '\n';
      });
      write_container(train_out, checkpoint_container(ckpt));
    } catch (const DivergenceError& e) {
      if (!train_log.empty()) write_text(train_log, log.str());
      const std::string dump = train_out + ".spectrum.csv";
      std::ostringstream csv;
      csv << "index,re,im,modulus\n";
      for (std::size_t i = 0; i < e.spectrum().size(); ++i) {
        const Complex v = e.spectrum()[i];
        csv << i << ',' << fmt(v.real()) << ',' << fmt(v.imag()) << ',' << fmt(std::abs(v)) << '\n';
      }
      write_text(dump, csv.str());
      std::cerr << "error: " << e.what() << "\nspectrum dump: " << dump << '\n';
      return kExitNumeric;
    }
    if (!train_log.empty()) write_text(train_log, log.str());
    std::cout << "wrote checkpoint " << train_out << '\n';
    return kExitOk;
  }

  if (evl->parsed()) {
    RunConfig cfg = config_or_default(ev.config);
    if (!eval_protocol.empty()) cfg.eval.protocol = parse_protocol(eval_protocol);
    if (eval_epochs) cfg.eval.epochs = *eval_epochs;
    if (eval_seed) cfg.eval.seed = *eval_seed;
    const auto data = dataset_from_container(read_container(ev.data));
    const Model model = checkpoint_from_container(read_container(ev.ckpt)).model();
    const Judge judge = train_judge(data.train, cfg.eval.judge);
    const auto gm = eval_generation_metrics(model, data.test, judge, cfg.eval.protocol,
                                            {cfg.eval.epochs, cfg.eval.seed});
    const std::string label = cfg.eval.static_label.empty() ? first_static_factor(data.test) : cfg.eval.static_label;
    const auto eer = eval_eer(model, data.test, label);
    Json judge_acc = Json::object();
    for (const auto& c : judge.classifiers()) {
      judge_acc[c.factor.name] = judge.accuracy(data.test.frames, c.factor.name, data.test.labels_of(c.factor.name));
    }
    Json out{{"protocol", to_string(gm.protocol)},
             {"epochs", gm.epochs},
             {"preserved", gm.preserved},
             {"acc", gm.mean.acc},
             {"is", gm.mean.is},
             {"h_y_given_x", gm.mean.h_y_given_x},
             {"h_y", gm.mean.h_y},
             {"eer_static", eer.eer_static},
             {"eer_dynamic", eer.eer_dynamic},
             {"eer_label", label},
             {"mean", summary_json(gm.mean)},
             {"std", summary_json(gm.std)},
             {"judge_test_accuracy", judge_acc}};
    write_text(eval_json, out.dump(2) + "\n");
    std::cout << "acc " << gm.mean.acc << " +- " << gm.std.acc << ", H(y|x) " << gm.mean.h_y_given_x << ", H(y) "
              << gm.mean.h_y << ", EER static " << eer.eer_static << " dynamic " << eer.eer_dynamic << '\n';
    return kExitOk;
  }

  if (swp->parsed() || smp->parsed() || spc->parsed() || idn->parsed()) {
    const Common& c = swp->parsed() ? sw : smp->parsed() ? sm : spc->parsed() ? sp : idf;
    RunConfig cfg = config_or_default(c.config);
    const auto data = dataset_from_container(read_container(c.data));
    const Model model = checkpoint_from_container(read_container(c.ckpt)).model();
    const SequenceBatch& batch = pick_split(data, c.split);
    const LatentBatch z = model.encode(batch.frames);
    const KoopmanSpectrum spectrum = estimate_operator(z);
    const auto partition =
        identify_two_factor(spectrum, model.config().spectral.k_s, model.config().spectral.selection);

    if (spc->parsed()) {
      write_text(spectrum_out, spectrum_csv(spectrum, partition));
      std::cout << "wrote " << spectrum.dim() << " eigenvalues to " << spectrum_out << '\n';
      return kExitOk;
    }

    if (idn->parsed()) {
      const Judge judge = train_judge(data.train, cfg.eval.judge);
      const auto id = identify_factor_subspace(model, batch, judge, identify_factor, cfg.eval.identify);
      Json candidates = Json::array();
      for (const auto& s : id.candidates) {
        candidates.push_back({{"indices", s.indices},
                              {"target_retention", s.target_retention},
                              {"target_transfer", s.target_transfer},
                              {"other_retention", s.other_retention},
                              {"admissible", s.admissible}});
      }
      Json out{{"factor", id.factor},
               {"identified", id.identified},
               {"indices", id.indices},
               {"baseline", id.baseline},
               {"other_factors", id.other_factors},
               {"other_baseline", id.other_baseline},
               {"target_retention", id.best.target_retention},
               {"target_transfer", id.best.target_transfer},
               {"other_retention", id.best.other_retention},
               {"reason", id.reason},
               {"candidates", candidates}};
      write_text(identify_json, out.dump(2) + "\n");
      if (!id.identified) {
        std::cout << "not identified: " << id.reason << '\n';
      } else {
        std::cout << "factor " << identify_factor << ": " << id.indices.size() << " eigen indices\n";
      }
      return kExitOk;
    }

    const auto zbar = project(z, spectrum);
    if (swp->parsed()) {
      if (swap_src >= batch.samples() || swap_tgt >= batch.samples()) {
        throw ConfigError("src", "sample index out of range (batch holds " + std::to_string(batch.samples()) + ")");
      }
      std::optional<Judge> judge;
      std::vector<std::size_t> indices;
      std::vector<std::string> names;
      std::stringstream list(swap_list);
      for (std::string name; std::getline(list, name, ',');) {
        if (name.empty()) continue;
        names.push_back(name);
        for (auto i : factor_indices(name, model, batch, partition, cfg.eval, judge, data)) {
          if (std::find(indices.begin(), indices.end(), i) == indices.end()) indices.push_back(i);
        }
      }
      if (names.empty()) throw ConfigError("factors", "no factor names given");
      const auto swapped = skd::swap_factors(zbar, swap_src, swap_tgt, indices);
      const Tensor decoded = model.decode(reconstruct(swapped, spectrum).z);
      const auto picked = SequenceBatch{decoded, {}, {}, batch.range}.subset({swap_src, swap_tgt});
      write_container(swap_out, sequences_container(picked.frames, Json{{"operation", "swap"},
                                                                        {"split", c.split},
                                                                        {"src", swap_src},
                                                                        {"tgt", swap_tgt},
                                                                        {"factors", names},
                                                                        {"indices", indices}}));
      std::cout << "swapped " << indices.size() << " eigen coordinates; wrote " << swap_out << '\n';
      return kExitOk;
    }

    // sample
    if (sample_subspace != "static" && sample_subspace != "dynamic") {
      throw ConfigError("subspace", "expected static or dynamic, got '" + sample_subspace + "'");
    }
    const auto& indices = sample_subspace == "static" ? partition.stat : partition.dyn;
    const auto mixed = sample_convex(zbar, indices, dirichlet_weights(batch.samples(), sample_seed));
    const Tensor decoded = model.decode(reconstruct(mixed, spectrum).z);
    write_container(sample_out, sequences_container(decoded, Json{{"operation", "sample"},
                                                                  {"split", c.split},
                                                                  {"subspace", sample_subspace},
                                                                  {"seed", sample_seed},
                                                                  {"indices", indices}}));
    std::cout << "sampled " << decoded.extent(0) << " sequences; wrote " << sample_out << '\n';
    return kExitOk;
  }
  return kExitFailure;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const skd::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const skd::PreconditionError& e) {
    std::cerr << "validation error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const skd::ShapeError& e) {
    std::cerr << "validation error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const skd::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}
