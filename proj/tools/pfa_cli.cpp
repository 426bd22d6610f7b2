// Command-line front end. Every subcommand prints a JSON summary on stdout;
// failures print {"error": {...}} on stderr and exit nonzero.

#include <cstdio>
#include <deque>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "pfa/gradcheck.hpp"
#include "pfa/pipeline.hpp"

namespace {

using Overrides = std::vector<std::pair<std::string, std::string>>;
using pfa::Error;

int fail(const std::string& type, const std::string& message, const std::string& stage = "") {
  nlohmann::ordered_json j;
  j["error"]["type"] = type;
  j["error"]["message"] = message;
  if (!stage.empty()) j["error"]["stage"] = stage;
  std::cerr << j.dump() << std::endl;
  return 1;
}

void print(const nlohmann::ordered_json& j) { std::cout << j.dump(2) << std::endl; }

// Adds "--flag" bound to config key `key` when given.
struct FlagMap {
  std::deque<std::pair<std::string, std::string>> values;  // key -> raw text; deque keeps bound references valid
  std::vector<std::pair<std::string, CLI::Option*>> opts;

  void add(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    values.emplace_back(key, "");
    opts.emplace_back(key, app->add_option(flag, values.back().second, help));
  }

  Overrides overrides() const {
    Overrides o;
    for (std::size_t i = 0; i < opts.size(); ++i)
      if (opts[i].second->count() > 0) o.emplace_back(values[i].first, values[i].second);
    return o;
  }
};

nlohmann::ordered_json grad_check_json(const std::vector<pfa::GradCheckRow>& rows, bool& all_ok) {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  all_ok = true;
  for (const auto& r : rows) {
    j.push_back({{"check", r.name}, {"coords", r.coords}, {"max_rel_error", r.max_rel_error}, {"passed", r.passed}});
    all_ok = all_ok && r.passed;
  }
  return j;
}

int run_grad_check_cmd() {
  bool ok = false;
  const auto rows = pfa::run_grad_check();
  nlohmann::ordered_json j;
  j["grad_check"] = grad_check_json(rows, ok);
  j["passed"] = ok;
  print(j);
  if (!ok) return fail("GradCheckFailure", "one or more gradient checks failed", "grad-check");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Provider-fair ranking adapter: data prep, pretraining, adapter training and evaluation"};
  app.require_subcommand(1);

  // prepare
  auto* prepare = app.add_subcommand("prepare", "Filter, split and partition interactions into a bundle");
  std::string prep_data, prep_synth, prep_out;
  FlagMap prep_flags;
  auto* data_opt = prepare->add_option("--data", prep_data, "TSV file: user, item, provider per line");
  auto* synth_opt = prepare->add_option("--synthetic", prep_synth, "Synthetic data, e.g. skew=2.5,seed=13");
  data_opt->excludes(synth_opt);
  prep_flags.add(prepare, "--kcore", "kcore", "Minimum interactions per user and item");
  prep_flags.add(prepare, "--seed", "seed", "Split seed");
  prep_flags.add(prepare, "--groups", "groups", "Group fractions, e.g. 0.2,0.6,0.2");
  prepare->add_option("--out", prep_out, "Output bundle (JSON)")->required();

  // pretrain
  auto* pre = app.add_subcommand("pretrain", "Train the BPR matrix-factorization backbone");
  std::string pre_data, pre_out, pre_log;
  FlagMap pre_flags;
  pre->add_option("--data", pre_data, "Dataset bundle")->required();
  pre_flags.add(pre, "--lr", "pretrain.lr", "Learning rate");
  pre_flags.add(pre, "--epochs", "pretrain.epochs", "Epochs");
  pre_flags.add(pre, "--batch", "pretrain.batch", "Mini-batch size");
  pre_flags.add(pre, "--dim", "pretrain.dim", "Embedding dimension");
  pre_flags.add(pre, "--l2", "pretrain.l2", "L2 coefficient");
  pre_flags.add(pre, "--seed", "seed", "Seed");
  pre_flags.add(pre, "--k", "k", "Validation cutoff");
  pre->add_option("--out", pre_out, "Backbone checkpoint")->required();
  pre->add_option("--log", pre_log, "Per-epoch CSV log");

  // adapt
  auto* adapt = app.add_subcommand("adapt", "Train the fairness adapter on a frozen backbone");
  std::string ad_data, ad_backbone, ad_out, ad_final, ad_log, ad_steps;
  FlagMap ad_flags;
  adapt->add_option("--data", ad_data, "Dataset bundle")->required();
  adapt->add_option("--backbone", ad_backbone, "Backbone checkpoint")->required();
  ad_flags.add(adapt, "--lambda-acc", "lambda_acc", "Accuracy weight");
  ad_flags.add(adapt, "--lambda-inter", "lambda_inter", "Inter-group weight");
  ad_flags.add(adapt, "--lambda-intra", "lambda_intra", "Intra-group weight");
  ad_flags.add(adapt, "--fairness", "fairness", "hefa or kl");
  ad_flags.add(adapt, "--target", "target", "uniform_group, uniform_provider or custom");
  ad_flags.add(adapt, "--target-groups", "target.groups", "Group target for target=custom");
  ad_flags.add(adapt, "--epochs", "adapt.epochs", "Epochs");
  ad_flags.add(adapt, "--lr", "adapt.lr", "Learning rate");
  ad_flags.add(adapt, "--batch", "adapt.batch", "Users per mini-batch");
  ad_flags.add(adapt, "--beta", "adapt.beta", "Sorting-network steepness");
  ad_flags.add(adapt, "--candidates", "adapt.candidates", "Candidates per user, or full");
  ad_flags.add(adapt, "--ndcg-floor", "adapt.ndcg_floor", "Allowed relative NDCG drop for checkpoint selection");
  ad_flags.add(adapt, "--hidden", "adapt.hidden", "Hidden width");
  ad_flags.add(adapt, "--layers", "adapt.layers", "Linear layers (1-3)");
  ad_flags.add(adapt, "--init-scale", "adapt.init_scale", "Weight init scale");
  ad_flags.add(adapt, "--seed", "seed", "Seed");
  ad_flags.add(adapt, "--k", "k", "Cutoff K");
  adapt->add_option("--out", ad_out, "Selected adapter checkpoint")->required();
  adapt->add_option("--final", ad_final, "Last-epoch adapter checkpoint");
  adapt->add_option("--log", ad_log, "train_log.csv path");
  adapt->add_option("--steps", ad_steps, "Per-step loss CSV path");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Test-set accuracy and exposure metrics");
  std::string ev_data, ev_backbone, ev_adapter, ev_out, ev_exposure;
  FlagMap ev_flags;
  ev->add_option("--data", ev_data, "Dataset bundle")->required();
  ev->add_option("--backbone", ev_backbone, "Backbone checkpoint")->required();
  ev->add_option("--adapter", ev_adapter, "Adapter checkpoint (omit for the base model)");
  ev_flags.add(ev, "--k", "k", "Cutoff K");
  ev->add_option("--out", ev_out, "metrics.json path")->required();
  ev->add_option("--exposure", ev_exposure, "exposure.csv path");

  // report
  auto* rep = app.add_subcommand("report", "Per-group exposure shares and within-group Gini");
  std::string rep_metrics, rep_out;
  rep->add_option("--metrics", rep_metrics, "metrics.json from evaluate")->required();
  rep->add_option("--out", rep_out, "subgroups.csv path")->required();

  // sweep
  auto* sw = app.add_subcommand("sweep", "Run the pipeline over values of one axis");
  std::string sw_config, sw_axis, sw_values, sw_out;
  std::vector<std::string> sw_sets;
  sw->add_option("--config", sw_config, "Config file");
  sw->add_option("--set", sw_sets, "Override key=value (repeatable)");
  sw->add_option("--axis", sw_axis, "lambda_acc, inter_intra_ratio, hidden_dim or layers")->required();
  sw->add_option("--values", sw_values, "Comma-separated values, e.g. 1e-6,1e-4 or 5:1,1:1")->required();
  sw->add_option("--out", sw_out, "Output directory");

  // grad-check
  app.add_subcommand("grad-check", "Finite-difference checks of every gradient");

  // run
  auto* run = app.add_subcommand("run", "Run the staged pipeline from a config file");
  std::string run_config, run_stage = "report", run_out;
  std::vector<std::string> run_sets;
  run->add_option("--config", run_config, "Config file");
  run->add_option("--set", run_sets, "Override key=value (repeatable)");
  run->add_option("--stage", run_stage, "Last stage to run: prepare, pretrain, adapt, evaluate, report, grad-check");
  run->add_option("--out", run_out, "Output directory (overrides the config)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    fail("UsageError", e.what());
    return 2;
  }

  std::string stage_name;
  try {
    if (prepare->parsed()) {
      stage_name = "prepare";
      auto cfg = pfa::resolve_config("", prep_flags.overrides());
      pfa::RawInteractions raw;
      if (!prep_data.empty()) {
        raw = pfa::load_interactions(prep_data);
      } else {
        raw = pfa::generate_synthetic(pfa::parse_synthetic_spec(prep_synth));
      }
      const auto b = pfa::prepare_bundle(raw, cfg.kcore, cfg.seed, cfg.groups);
      pfa::save_bundle(b, prep_out);
      nlohmann::ordered_json j;
      j["bundle"] = prep_out;
      j["users"] = b.ds.num_users;
      j["items"] = b.ds.num_items;
      j["providers"] = b.ds.num_providers;
      j["interactions"] = b.ds.interactions.size();
      j["groups"] = b.part.members;
      print(j);
    } else if (pre->parsed()) {
      stage_name = "pretrain";
      const auto cfg = pfa::resolve_config("", pre_flags.overrides());
      const auto b = pfa::load_bundle(pre_data);
      const auto res = pfa::pretrain(b.ds, b.split, cfg.pretrain);
      pfa::save_embeddings(res.table, pre_out);
      if (!pre_log.empty()) {
        std::string log = "epoch,bpr_loss,val_ndcg\n";
        for (const auto& r : res.log)
          log += std::to_string(r.epoch) + "," + (std::isfinite(r.loss) ? pfa::format_double(r.loss) : "") + "," +
                 pfa::format_double(r.val_ndcg) + "\n";
        pfa::write_text(pre_log, log);
      }
      nlohmann::ordered_json j;
      j["checkpoint"] = pre_out;
      j["best_epoch"] = res.best_epoch;
      j["best_val_ndcg"] = res.log[res.best_epoch].val_ndcg;
      j["checksum"] = pfa::hex64(res.table.checksum());
      print(j);
    } else if (adapt->parsed()) {
      stage_name = "adapt";
      const auto cfg = pfa::resolve_config("", ad_flags.overrides());
      const auto b = pfa::load_bundle(ad_data);
      const auto emb = pfa::load_embeddings(ad_backbone);
      const auto tr = pfa::train_adapter(b.ds, b.split, b.part, emb, pfa::target_from_config(cfg, b), cfg.adapt);
      pfa::save_adapter(tr.best.params, ad_out);
      if (!ad_final.empty()) pfa::save_adapter(tr.snapshots.back(), ad_final);
      if (!ad_log.empty()) pfa::write_text(ad_log, pfa::csv_train_log(tr.log));
      if (!ad_steps.empty()) pfa::write_text(ad_steps, pfa::csv_steps(tr.steps));
      nlohmann::ordered_json j;
      j["checkpoint"] = ad_out;
      j["selected_epoch"] = tr.best.epoch;
      j["val_ndcg"] = tr.best.val_ndcg;
      j["val_gini"] = tr.best.val_gini;
      j["base_val_ndcg"] = tr.base_val_ndcg;
      j["base_val_gini"] = tr.base_val_gini;
      print(j);
    } else if (ev->parsed()) {
      stage_name = "evaluate";
      const auto cfg = pfa::resolve_config("", ev_flags.overrides());
      const auto b = pfa::load_bundle(ev_data);
      const auto emb = pfa::load_embeddings(ev_backbone);
      const auto k = cfg.adapt.k;
      const auto base = pfa::evaluate(b.ds, b.split, b.part, emb, nullptr, k, pfa::EvalPhase::test);
      nlohmann::ordered_json m;
      m["base"] = pfa::report_json(base);
      std::vector<std::pair<std::string, const pfa::EvalReport*>> cols = {{"base", &base}};
      std::optional<pfa::EvalReport> adapted;
      if (!ev_adapter.empty()) {
        const auto params = pfa::load_adapter(ev_adapter);
        adapted = pfa::evaluate(b.ds, b.split, b.part, emb, &params, k, pfa::EvalPhase::test);
        m["adapted"] = pfa::report_json(*adapted);
        m["relative_change"] = {{"ndcg", adapted->ndcg / base.ndcg - 1.0}, {"gini", adapted->gini / base.gini - 1.0}};
        cols.emplace_back("adapted", &*adapted);
      }
      pfa::write_text(ev_out, m.dump(2) + "\n");
      if (!ev_exposure.empty()) pfa::write_text(ev_exposure, pfa::csv_exposure(b, cols));
      print(m);
    } else if (rep->parsed()) {
      stage_name = "report";
      nlohmann::json m;
      try {
        m = nlohmann::json::parse(pfa::read_text(rep_metrics));
      } catch (const nlohmann::json::exception& e) {
        throw Error("metrics file " + rep_metrics + ": " + e.what());
      }
      const auto csv = pfa::csv_subgroups_from_metrics(m);
      pfa::write_text(rep_out, csv);
      std::cout << csv;
    } else if (sw->parsed()) {
      stage_name = "sweep";
      Overrides o;
      for (const auto& s : sw_sets) o.push_back(pfa::split_assignment(s));
      if (!sw_out.empty()) o.emplace_back("out", sw_out);
      const auto cfg = pfa::load_config(sw_config, o);
      const auto axis = pfa::parse_sweep_axis(sw_axis);
      std::vector<std::string> values;
      for (const auto& v : pfa::detail::split_on(sw_values, ','))
        if (!v.empty()) values.push_back(v);
      const auto rows = pfa::run_sweep(cfg, axis, values);
      nlohmann::ordered_json j;
      j["summary"] = (cfg.out / ("sweep_" + pfa::to_string(axis) + ".csv")).string();
      bool any_ok = false;
      for (const auto& r : rows) {
        j["runs"].push_back({{"value", r.value}, {"ok", r.ok}, {"dir", r.dir.string()}, {"error", r.error}});
        any_ok = any_ok || r.ok;
      }
      print(j);
      if (!any_ok) return fail("SweepFailure", "every sweep value failed", "sweep");
    } else if (app.got_subcommand("grad-check")) {
      stage_name = "grad-check";
      return run_grad_check_cmd();
    } else if (run->parsed()) {
      stage_name = "run";
      if (run_stage == "grad-check") return run_grad_check_cmd();
      Overrides o;
      for (const auto& s : run_sets) o.push_back(pfa::split_assignment(s));
      if (!run_out.empty()) o.emplace_back("out", run_out);
      const auto cfg = pfa::load_config(run_config, o);
      const auto last = pfa::parse_stage(run_stage);
      const auto res = pfa::run_pipeline(cfg, last);
      nlohmann::ordered_json j;
      j["dir"] = res.dir.string();
      j["config_hash"] = res.config_hash;
      for (const auto& s : res.stages) j["stages"][pfa::to_string(s.stage)] = s.ran ? "ran" : "skipped";
      print(j);
    }
  } catch (const pfa::StageError& e) {
    return fail("StageError", e.what(), pfa::to_string(e.stage()));
  } catch (const pfa::ParseError& e) {
    return fail("ParseError", e.what(), stage_name);
  } catch (const pfa::NumericError& e) {
    return fail("NumericError", e.what(), stage_name);
  } catch (const pfa::Error& e) {
    return fail("Error", e.what(), stage_name);
  } catch (const std::exception& e) {
    return fail("InternalError", e.what(), stage_name);
  }
  return 0;
}
