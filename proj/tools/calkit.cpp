// calkit: command-line front end for the calibration toolkit.
//
// Exit codes: 0 success, 1 invalid input or arguments, 2 model client or
// transport failure, 3 finished with incomplete results.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "calkit/calib_metrics.hpp"
#include "calkit/errors.hpp"
#include "calkit/fusion_sweep.hpp"
#include "calkit/idk_pipeline.hpp"
#include "calkit/model_client.hpp"
#include "calkit/prompt_opt.hpp"
#include "calkit/prompts.hpp"
#include "calkit/record_store.hpp"
#include "calkit/report.hpp"
#include "calkit/semantic_entropy.hpp"
#include "calkit/synthetic_model.hpp"
#include "calkit/temp_scale.hpp"
#include "calkit/util.hpp"

using namespace calkit;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInvalid = 1;
constexpr int kExitClient = 2;
constexpr int kExitIncomplete = 3;

struct Globals {
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  std::string replay;
  std::string record_log;
  std::string endpoint;
  std::string model;
  std::string token_env;
  int timeout_ms = 0;
  int max_retries = -1;
  std::string strategy;
  std::string synthetic;  // accuracy curve; replaces the HTTP client with the simulator
  std::size_t synthetic_k = 4;
  bool no_manifest = false;
  std::vector<std::string> argv;
  // set by make_client so the manifest can say which client answered
  mutable Json client_info;
};

std::shared_ptr<ModelClient> make_client(const Globals& g, const std::string& model_override = {}) {
  if (!g.synthetic.empty()) {
    SyntheticModelSpec spec;
    spec.option_count = g.synthetic_k;
    spec.accuracy = AccuracyCurve::parse(g.synthetic);
    spec.seed = g.seed;
    g.client_info = {{"kind", "synthetic"}, {"accuracy", spec.accuracy.describe()}, {"option_count", spec.option_count}};
    return std::make_shared<SyntheticModel>(spec);
  }
  ClientConfig c = ClientConfig::from_env();
  if (!g.endpoint.empty()) c.endpoint = g.endpoint;
  if (!g.model.empty()) c.model = g.model;
  if (!model_override.empty()) c.model = model_override;
  if (!g.token_env.empty()) c.auth_token_env = g.token_env;
  if (g.timeout_ms > 0) c.timeout = std::chrono::milliseconds(g.timeout_ms);
  if (g.max_retries >= 0) c.max_retries = g.max_retries;
  if (g.strategy == "forced") c.strategy = OptionLogitStrategy::forced_option;
  c.max_in_flight = std::max<std::size_t>(1, g.jobs);
  c.jitter_seed = g.seed;
  if (g.replay.empty()) c.validate();
  g.client_info = {{"kind", g.replay.empty() ? "http" : "replay"},
                   {"endpoint", c.endpoint},
                   {"model", c.model},
                   {"logit_strategy", std::string(to_string(c.strategy))}};
  return make_http_client(c, g.record_log, g.replay);
}

RunManifest manifest_for(const Globals& g, const std::string& command) {
  RunManifest m;
  m.command = command;
  m.args = g.argv;
  m.seed = g.seed;
  m.replay_log = g.replay;
  return m;
}

void finish(const Globals& g, RunManifest& m, const std::string& primary_out) {
  if (g.no_manifest || primary_out.empty() || primary_out == "-") return;
  if (!g.client_info.is_null()) m.extra["client"] = g.client_info;
  m.write(primary_out + ".manifest.json");
}

// Writes to `path`, or stdout for "" / "-".
void emit(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << text;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  return out;
}

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  for (const auto& part : split(text, ',')) {
    if (trim(part).empty()) continue;
    try {
      out.push_back(std::stod(part));
    } catch (const std::exception&) {
      throw DomainError("bad number in list: '" + part + "'");
    }
  }
  return out;
}

std::string fixed(double v, int d) { return std::isfinite(v) ? format_fixed(v, d) : "nan"; }

// Open-ended correctness: normalized match against metadata "answer" (string or list).
bool open_answer_matches(const ResponseRecord& r, std::string_view answer) {
  const auto it = r.metadata.find("answer");
  if (it == r.metadata.end()) throw ValidationError("answer", "open-ended record " + r.id + " has no gold answer");
  const std::string a = normalize_answer(answer);
  if (it->is_string()) return a == normalize_answer(it->get<std::string>());
  if (it->is_array()) {
    for (const auto& g : *it)
      if (g.is_string() && a == normalize_answer(g.get<std::string>())) return true;
    return false;
  }
  throw ValidationError("answer", "gold answer of " + r.id + " must be a string or list");
}

Json summary_json(const CalibrationSummary& s) {
  return {{"accuracy", s.accuracy}, {"mean_confidence", s.mean_confidence}, {"ece", s.ece},
          {"mce", s.mce},           {"ence", s.ence},                      {"count", s.count}};
}

// ---------------------------------------------------------------- commands

struct ValidateArgs {
  std::string path;
  std::string task = "mc";
};

int cmd_validate(const Globals&, const ValidateArgs& a) {
  // streamed so a file with no valid record still gets its errors listed
  std::size_t valid = 0;
  const auto errors =
      for_each_record(a.path, parse_task_kind(a.task), ErrorPolicy::skip, [&](ResponseRecord&&) { ++valid; });
  for (const auto& e : errors)
    std::cerr << a.path << ": " << e.message << "\n";
  std::cout << valid << " valid record(s), " << errors.size() << " error(s)\n";
  return errors.empty() && valid > 0 ? kExitOk : kExitInvalid;
}

struct MetricsArgs {
  std::string path;
  std::size_t bins = 10;
  std::string scheme = "width";
  std::string out;
  std::string reliability;
  std::string label;
  bool skip_unlabeled = false;
};

int cmd_metrics(const Globals& g, const MetricsArgs& a) {
  const Dataset d = load_dataset(a.path, TaskKind::multiple_choice);
  const RecordPoints rp =
      prediction_points(d.records, a.skip_unlabeled ? ErrorPolicy::skip : ErrorPolicy::fail_fast);
  const BinScheme scheme = parse_bin_scheme(a.scheme);
  const CalibrationSummary s = summarize_points(rp.points, a.bins, scheme);
  Json j = summary_json(s);
  j["label"] = a.label.empty() ? std::filesystem::path(a.path).stem().string() : a.label;
  j["bins"] = a.bins;
  j["scheme"] = std::string(to_string(scheme));
  j["skipped"] = rp.skipped_ids;
  j["seed"] = g.seed;
  emit(a.out, j.dump(2) + "\n");
  if (!a.reliability.empty()) {
    const ReliabilityTable t = bin_predictions(rp.points, a.bins, scheme);
    auto out = open_out(a.reliability);
    out << "bin_lower,bin_upper,count,mean_conf,mean_acc\n";
    for (const auto& b : t.bins) {
      out << b.lower << ',' << b.upper << ',' << b.count << ',' << (b.count ? std::to_string(b.conf_mean) : "")
          << ',' << (b.count ? std::to_string(b.acc_mean) : "") << '\n';
    }
  }
  if (!a.out.empty() && a.out != "-") {
    const SummaryRow row{j["label"].get<std::string>(), s};
    std::cout << render_summary_table(std::span(&row, 1));
  }
  RunManifest m = manifest_for(g, "metrics");
  m.add_input(a.path);
  m.outputs = {a.out};
  if (!a.reliability.empty()) m.outputs.push_back(a.reliability);
  finish(g, m, a.out);
  return kExitOk;
}

struct TsFitArgs {
  std::string path;
  std::string out;
  double lo = 0.05;
  double hi = 20.0;
  double tol = 1e-4;
};

int cmd_ts_fit(const Globals& g, const TsFitArgs& a) {
  const Dataset d = load_dataset(a.path, TaskKind::multiple_choice);
  const auto data = labeled_logits(d.records);
  FitOptions opt;
  opt.lo = a.lo;
  opt.hi = a.hi;
  opt.tol = a.tol;
  opt.jobs = g.jobs;
  const TemperatureFit fit = fit_temperature(data, opt);
  Json j{{"temperature", fit.temperature},
         {"nll_at_t", fit.nll_at_t},
         {"nll_at_1", nll(data, 1.0, g.jobs)},
         {"iterations", fit.iterations},
         {"converged", fit.converged},
         {"flat", fit.flat},
         {"lo", fit.lo},
         {"hi", fit.hi},
         {"n_records", data.size()},
         {"seed", g.seed}};
  emit(a.out, j.dump(2) + "\n");
  RunManifest m = manifest_for(g, "ts fit");
  m.add_input(a.path);
  m.outputs = {a.out};
  finish(g, m, a.out);
  return kExitOk;
}

struct TsApplyArgs {
  std::string path;
  std::string out;
  double t = 0.0;
  std::string fit;
};

int cmd_ts_apply(const Globals& g, const TsApplyArgs& a) {
  double t = a.t;
  RunManifest m = manifest_for(g, "ts apply");
  if (!a.fit.empty()) {
    try {
      t = Json::parse(read_file(a.fit)).at("temperature").get<double>();
    } catch (const Json::exception& e) {
      throw ParseError(0, a.fit + ": " + e.what());
    }
    m.add_input(a.fit);
  }
  if (!(t > 0.0)) throw DomainError("a temperature > 0 is required (--t or --fit)");
  const Dataset d = load_dataset(a.path, TaskKind::multiple_choice);
  std::vector<ResponseRecord> out;
  out.reserve(d.records.size());
  for (const auto& r : d.records) out.push_back(r.option_logits ? scale_record(r, t) : r);
  write_records(a.out, out);
  m.add_input(a.path);
  m.outputs = {a.out};
  m.extra["temperature"] = t;
  finish(g, m, a.out);
  return kExitOk;
}

struct EntropyArgs {
  std::string path;
  std::string judge = "exact";
  std::string task = "open";
  std::string out;
};

int cmd_entropy(const Globals& g, const EntropyArgs& a) {
  const Dataset d = load_dataset(a.path, parse_task_kind(a.task));
  std::shared_ptr<ModelClient> client;
  if (a.judge == "client") client = make_client(g);
  else if (a.judge != "exact") throw DomainError("unknown judge: " + a.judge);
  std::ostringstream os;
  os << "id,n_samples,n_clusters,entropy_nats\n";
  for (const auto& r : d.records) {
    if (!r.samples || r.samples->empty()) throw ValidationError("samples", "record " + r.id + " has no samples");
    std::vector<std::string> texts;
    for (const auto& s : *r.samples) texts.push_back(s.text);
    const EquivalenceJudge judge =
        client ? EquivalenceJudge::client_judged(client, r.question) : EquivalenceJudge::normalized_exact();
    const ClusterPartition p = cluster_samples(texts, judge);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10f", semantic_entropy(p));
    os << csv_field(r.id) << ',' << texts.size() << ',' << p.clusters.size() << ',' << buf << '\n';
  }
  emit(a.out, os.str());
  RunManifest m = manifest_for(g, "entropy");
  m.add_input(a.path);
  m.outputs = {a.out};
  finish(g, m, a.out);
  return kExitOk;
}

struct SegmentArgs {
  std::string path;
  std::string task = "mc";
  double threshold = 1.0;
  bool query = false;
  std::size_t trials = 10;
  double temperature = 1.0;
  double top_p = 0.95;
  std::string trials_out;
  std::string out;
};

int cmd_idk_segment(const Globals& g, const SegmentArgs& a) {
  const Dataset d = load_dataset(a.path, parse_task_kind(a.task));
  std::vector<TrialSet> sets;
  std::vector<RecordFailure> failures;
  if (a.query) {
    auto client = make_client(g);
    TrialOptions opt;
    opt.n = a.trials;
    opt.temperature = a.temperature;
    opt.top_p = a.top_p;
    opt.jobs = g.jobs;
    TrialRun run = run_trials(d.records, *client, opt, open_answer_matches);
    sets = std::move(run.trial_sets);
    failures = std::move(run.failures);
  } else {
    for (const auto& r : d.records) sets.push_back(trials_from_record(r));
    std::sort(sets.begin(), sets.end(), [](const TrialSet& x, const TrialSet& y) { return x.record_id < y.record_id; });
  }
  if (!a.trials_out.empty()) {
    auto out = open_out(a.trials_out);
    write_trials_jsonl(out, sets);
  }
  std::ostringstream os;
  std::size_t ik = 0;
  for (const auto& ts : sets) {
    const KnowledgeLabel k = segment_known(ts, a.threshold);
    ik += k.label == Knowledge::ik ? 1 : 0;
    os << Json{{"id", ts.record_id},
               {"label", std::string(to_string(k.label))},
               {"trial_accuracy", k.trial_accuracy},
               {"threshold", k.threshold},
               {"n_trials", ts.n_trials()}}
              .dump()
       << '\n';
  }
  emit(a.out, os.str());
  for (const auto& f : failures) std::cerr << "failed: " << f.record_id << ": " << f.message << "\n";
  std::cerr << ik << " IK, " << sets.size() - ik << " IDK, " << failures.size() << " failed\n";
  RunManifest m = manifest_for(g, "idk segment");
  m.add_input(a.path);
  m.outputs = {a.out};
  if (!a.trials_out.empty()) m.outputs.push_back(a.trials_out);
  finish(g, m, a.out);
  return failures.empty() ? kExitOk : kExitIncomplete;
}

struct QuadrantArgs {
  std::string path;
  std::string task = "mc";
  std::string labels;
  std::string prompting = "on";
  bool ood = false;
  bool query = false;
  std::string label;
  std::string format = "text";
  std::string out;
};

std::map<std::string, Knowledge> read_labels(const std::string& path) {
  std::map<std::string, Knowledge> out;
  std::istringstream in(read_file(path));
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (trim(line).empty()) continue;
    try {
      const Json j = Json::parse(line);
      const std::string l = j.at("label").get<std::string>();
      if (l != "IK" && l != "IDK") throw ValidationError("label", "expected IK or IDK", n);
      out[j.at("id").get<std::string>()] = l == "IK" ? Knowledge::ik : Knowledge::idk;
    } catch (const Json::exception& e) {
      throw ParseError(n, e.what());
    }
  }
  return out;
}

int cmd_idk_quadrants(const Globals& g, const QuadrantArgs& a) {
  if (a.prompting != "on" && a.prompting != "off") throw DomainError("--prompting must be on or off");
  if (a.ood == !a.labels.empty()) throw DomainError("give exactly one of --labels or --ood");
  const Dataset d = load_dataset(a.path, parse_task_kind(a.task));
  const auto labels = a.ood ? std::map<std::string, Knowledge>{} : read_labels(a.labels);

  std::vector<std::string> answers(d.records.size());
  if (a.query) {
    auto client = make_client(g);
    parallel_for(d.records.size(), g.jobs, [&](std::size_t i) {
      const auto& r = d.records[i];
      std::string instruction(r.options ? kMultipleChoiceInstruction : kOpenEndedInstruction);
      if (a.prompting == "on") instruction += " " + std::string(kIdkInstruction);
      answers[i] = client->sample_answers(question_prompt(r, kDefaultSuffix, instruction), 1).front();
    });
  } else {
    for (std::size_t i = 0; i < d.records.size(); ++i) {
      const auto& r = d.records[i];
      if (!r.samples || r.samples->empty()) throw ValidationError("samples", "record " + r.id + " has no answer");
      answers[i] = r.samples->front().text;
    }
  }

  QuadrantCounts counts = a.ood ? QuadrantCounts::ood(0, 0) : QuadrantCounts{};
  for (std::size_t i = 0; i < d.records.size(); ++i) {
    KnowledgeLabel k;
    if (!a.ood) {
      const auto it = labels.find(d.records[i].id);
      if (it == labels.end()) throw ValidationError("id", "no knowledge label for record " + d.records[i].id);
      k.label = it->second;
    }
    const bool refused = detect_refusal(answers[i]);
    const Quadrant q = classify_quadrant(k, refused);
    if (a.ood) {
      if (q == Quadrant::ik_idk) ++counts.ik_idk;
      else ++counts.idk_idk;
    } else {
      counts.add(q);
    }
  }
  const std::string label = a.label.empty() ? std::filesystem::path(a.path).stem().string() : a.label;
  const QuadrantRow row{label, counts};
  auto opt = [](const std::optional<std::size_t>& v) { return v ? Json(*v) : Json(nullptr); };
  Json j{{"label", label},
         {"prompting", a.prompting},
         {"ood", a.ood},
         {"IK-IDK", counts.ik_idk},
         {"IDK-IDK", counts.idk_idk},
         {"IK-IK", opt(counts.ik_ik)},
         {"IDK-IK", opt(counts.idk_ik)},
         {"TRUTHFUL", format_percent(truthful_score(counts))},
         {"truthful", truthful_score(counts)},
         {"total", counts.total()},
         {"seed", g.seed}};
  if (a.out.empty() || a.out == "-") {
    std::cout << render_quadrant_table(std::span(&row, 1), parse_table_format(a.format));
  } else {
    emit(a.out, j.dump(2) + "\n");
    std::cout << render_quadrant_table(std::span(&row, 1), parse_table_format(a.format));
  }
  RunManifest m = manifest_for(g, "idk quadrants");
  m.add_input(a.path);
  if (!a.labels.empty()) m.add_input(a.labels);
  m.outputs = {a.out};
  finish(g, m, a.out);
  return kExitOk;
}

struct BuildOodArgs {
  std::string path;
  std::size_t k = 5;
  std::string out;
};

int cmd_idk_build_ood(const Globals& g, const BuildOodArgs& a) {
  auto client = make_client(g);
  std::istringstream in(read_file(a.path));
  std::ostringstream os;
  std::string line;
  std::size_t n = 0, kept = 0, articles_failed = 0;
  while (std::getline(in, line)) {
    ++n;
    if (trim(line).empty()) continue;
    Article art;
    try {
      art = article_from_json(Json::parse(line));
    } catch (const Json::parse_error& e) {
      throw ParseError(n, e.what());
    }
    try {
      const OodBuild b = build_ood_mcq(art, *client, a.k);
      for (const auto& r : b.rejected) std::cerr << art.id << ": dropped: " << r << "\n";
      for (const auto& item : b.items) os << ood_item_to_json(item).dump() << '\n';
      kept += b.items.size();
    } catch (const EmptyInputError& e) {
      ++articles_failed;
      std::cerr << art.id << ": " << e.what() << "\n";
    }
  }
  emit(a.out, os.str());
  std::cerr << kept << " question(s) kept, " << articles_failed << " article(s) without valid questions\n";
  RunManifest m = manifest_for(g, "idk build-ood");
  m.add_input(a.path);
  m.outputs = {a.out};
  finish(g, m, a.out);
  return articles_failed == 0 ? kExitOk : kExitIncomplete;
}

struct SweepArgs {
  std::string path;
  std::string sigmas = "0,25,50,100";
  std::string form = "mc";
  std::size_t samples = 10;
  std::string out;
  std::string raw;
  std::string dump_dir;
};

int cmd_sweep(const Globals& g, const SweepArgs& a) {
  const auto items = load_fusion_items(a.path);
  auto client = make_client(g);
  SweepOptions opt;
  opt.sigmas = parse_list(a.sigmas);
  opt.form = parse_question_form(a.form);
  opt.n_samples = a.samples;
  opt.jobs = g.jobs;
  opt.base_seed = g.seed;
  opt.dump_dir = a.dump_dir;
  const SweepGrid grid = run_sweep(items, *client, opt);
  std::ostringstream os;
  export_curves(os, grid);
  emit(a.out, os.str());
  if (!a.raw.empty()) {
    auto out = open_out(a.raw);
    write_raw_jsonl(out, grid);
  }
  RunManifest m = manifest_for(g, "sweep");
  m.add_input(a.path);
  for (const auto& it : items)
    if (std::filesystem::is_regular_file(it.image_ref)) m.add_input(it.image_ref);
  m.outputs = {a.out};
  if (!a.raw.empty()) m.outputs.push_back(a.raw);
  finish(g, m, a.out);
  if (!grid.complete()) {
    std::cerr << "sweep finished with failed cells\n";
    return kExitIncomplete;
  }
  return kExitOk;
}

struct ApeArgs {
  std::string seeds;
  std::string eval;
  std::size_t k = 4, m = 5, n = 10;
  double band = 0.02;
  std::string generator_model;
  std::string templ;
  std::string out;
};

int cmd_ape(const Globals& g, const ApeArgs& a) {
  std::vector<std::string> seeds;
  for (const auto& l : split(read_file(a.seeds), '\n'))
    if (!trim(l).empty()) seeds.push_back(trim(l));
  const Dataset d = load_dataset(a.eval, TaskKind::multiple_choice);
  auto client = make_client(g);
  auto generator = a.generator_model.empty() ? client : make_client(g, a.generator_model);
  const std::string templ = a.templ.empty() ? std::string(kParaphraseTemplate) : read_file(a.templ);
  SuffixEvaluator evaluator(d.records, *client);
  OptParams p;
  p.k = a.k;
  p.m = a.m;
  p.n = a.n;
  p.band_width = a.band;
  p.jobs = g.jobs;
  const OptState state = optimize(seeds, p, evaluator, *generator, templ);
  Json j = trace_json(state);
  j["seed"] = g.seed;
  j["model_queries"] = evaluator.model_queries();
  j["cache_hits"] = evaluator.cache_hits();
  emit(a.out, j.dump(2) + "\n");
  RunManifest m = manifest_for(g, "ape");
  m.add_input(a.seeds);
  m.add_input(a.eval);
  if (!a.templ.empty()) m.add_input(a.templ);
  m.outputs = {a.out};
  finish(g, m, a.out);
  if (state.aborted) {
    std::cerr << "ape aborted: " << state.abort_reason << "\n";
    return kExitIncomplete;
  }
  if (!a.out.empty() && a.out != "-")
    std::cout << "best: \"" << state.best.text << "\" acc " << fixed(state.best.accuracy, 3) << " ece "
              << fixed(state.best.ece, 3) << "\n";
  return kExitOk;
}

struct ReportArgs {
  std::string kind = "metrics";
  std::vector<std::string> inputs;
  std::string format = "text";
  std::string out;
};

int cmd_report(const Globals& g, const ReportArgs& a) {
  const TableFormat fmt = parse_table_format(a.format);
  std::string text;
  RunManifest m = manifest_for(g, "report");
  if (a.kind == "metrics") {
    std::vector<SummaryRow> rows;
    for (const auto& path : a.inputs) {
      const Json j = Json::parse(read_file(path));
      SummaryRow r;
      r.label = j.value("label", std::filesystem::path(path).stem().string());
      r.summary.accuracy = j.at("accuracy").get<double>();
      r.summary.mean_confidence = j.at("mean_confidence").get<double>();
      r.summary.ece = j.at("ece").get<double>();
      r.summary.mce = j.at("mce").get<double>();
      r.summary.ence = j.at("ence").get<double>();
      r.summary.count = j.value("count", std::size_t{0});
      rows.push_back(r);
      m.add_input(path);
    }
    text = render_summary_table(rows, fmt);
  } else if (a.kind == "quadrants") {
    std::vector<QuadrantRow> rows;
    for (const auto& path : a.inputs) {
      const Json j = Json::parse(read_file(path));
      QuadrantRow r;
      r.label = j.value("label", std::filesystem::path(path).stem().string());
      const bool ood = j.at("IK-IK").is_null();
      r.counts = ood ? QuadrantCounts::ood(j.at("IK-IDK").get<std::size_t>(), j.at("IDK-IDK").get<std::size_t>())
                     : QuadrantCounts{j.at("IK-IDK").get<std::size_t>(), j.at("IDK-IDK").get<std::size_t>(),
                                      j.at("IK-IK").get<std::size_t>(), j.at("IDK-IK").get<std::size_t>()};
      rows.push_back(r);
      m.add_input(path);
    }
    text = render_quadrant_table(rows, fmt);
  } else {
    throw DomainError("report kind must be metrics or quadrants");
  }
  emit(a.out, text);
  m.outputs = {a.out};
  finish(g, m, a.out);
  return kExitOk;
}

struct SimulateArgs {
  std::size_t n = 1000;
  std::size_t k = 4;
  std::string accuracy = "identity";
  std::string confidence = "uniform";
  double scale = 1.0;
  std::string model_id = "synthetic";
  std::string out;
};

int cmd_simulate(const Globals& g, const SimulateArgs& a) {
  SyntheticModelSpec spec;
  spec.option_count = a.k;
  spec.accuracy = AccuracyCurve::parse(a.accuracy);
  spec.confidence = ConfidenceDistribution::parse(a.confidence);
  spec.seed = g.seed;
  const SyntheticModel model(spec, a.scale);
  write_records(a.out, model.generate_records(a.n, a.model_id));
  RunManifest m = manifest_for(g, "simulate");
  m.outputs = {a.out};
  m.extra = {{"accuracy", spec.accuracy.describe()}, {"confidence", spec.confidence.describe()}, {"scale", a.scale}};
  finish(g, m, a.out);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Calibration and honesty evaluation toolkit for multimodal models", "calkit"};
  app.set_version_flag("--version", std::string(toolkit_version()));
  app.require_subcommand(1);

  Globals g;
  g.argv.assign(argv, argv + argc);
  app.add_option("--seed", g.seed, "Seed for every random draw")->capture_default_str();
  app.add_option("--jobs", g.jobs, "Concurrent jobs and client requests")->capture_default_str();
  app.add_option("--replay", g.replay, "Answer model requests from this log; no network");
  app.add_option("--record-log", g.record_log, "Append model exchanges to this log");
  app.add_option("--endpoint", g.endpoint, "Chat-completions URL (or CALKIT_ENDPOINT)");
  app.add_option("--model", g.model, "Model name (or CALKIT_MODEL)");
  app.add_option("--token-env", g.token_env, "Name of the env var holding the API token");
  app.add_option("--timeout-ms", g.timeout_ms, "Per-request timeout");
  app.add_option("--max-retries", g.max_retries, "Retries per request");
  app.add_option("--logit-strategy", g.strategy, "first (top logprobs) or forced (one call per option)")
      ->check(CLI::IsMember({"first", "forced"}));
  app.add_option("--synthetic", g.synthetic, "Use the simulator with this accuracy curve instead of a server");
  app.add_option("--synthetic-k", g.synthetic_k, "Option count of the simulator")->capture_default_str();
  app.add_flag("--no-manifest", g.no_manifest, "Do not write <out>.manifest.json");

  std::function<int()> run;

  ValidateArgs va;
  auto* validate = app.add_subcommand("validate", "Check a records file");
  validate->add_option("path", va.path)->required()->check(CLI::ExistingFile);
  validate->add_option("--task", va.task)->check(CLI::IsMember({"mc", "open"}))->capture_default_str();
  validate->callback([&] { run = [&] { return cmd_validate(g, va); }; });

  MetricsArgs ma;
  auto* metrics = app.add_subcommand("metrics", "Accuracy, confidence, ECE, MCE and ENCE");
  metrics->add_option("path", ma.path)->required()->check(CLI::ExistingFile);
  metrics->add_option("--bins", ma.bins)->capture_default_str();
  metrics->add_option("--scheme", ma.scheme, "width or mass")->capture_default_str();
  metrics->add_option("--out", ma.out, "Summary JSON (stdout if omitted)");
  metrics->add_option("--reliability", ma.reliability, "Per-bin CSV");
  metrics->add_option("--label", ma.label, "Row label for reports");
  metrics->add_flag("--skip-unlabeled", ma.skip_unlabeled, "Skip records without logits or gold");
  metrics->callback([&] { run = [&] { return cmd_metrics(g, ma); }; });

  auto* ts = app.add_subcommand("ts", "Temperature scaling");
  ts->require_subcommand(1);
  TsFitArgs tfa;
  auto* ts_fit = ts->add_subcommand("fit", "Fit T on a calibration split");
  ts_fit->add_option("path", tfa.path)->required()->check(CLI::ExistingFile);
  ts_fit->add_option("--out", tfa.out);
  ts_fit->add_option("--lo", tfa.lo)->capture_default_str();
  ts_fit->add_option("--hi", tfa.hi)->capture_default_str();
  ts_fit->add_option("--tol", tfa.tol)->capture_default_str();
  ts_fit->callback([&] { run = [&] { return cmd_ts_fit(g, tfa); }; });
  TsApplyArgs taa;
  auto* ts_apply = ts->add_subcommand("apply", "Rewrite option logits as l/T");
  ts_apply->add_option("path", taa.path)->required()->check(CLI::ExistingFile);
  ts_apply->add_option("--out", taa.out)->required();
  auto* t_opt = ts_apply->add_option("--t", taa.t, "Temperature");
  ts_apply->add_option("--fit", taa.fit, "fit.json from `ts fit`")->excludes(t_opt)->check(CLI::ExistingFile);
  ts_apply->callback([&] { run = [&] { return cmd_ts_apply(g, taa); }; });

  EntropyArgs ea;
  auto* entropy = app.add_subcommand("entropy", "Semantic entropy of sampled answers");
  entropy->add_option("path", ea.path)->required()->check(CLI::ExistingFile);
  entropy->add_option("--judge", ea.judge, "exact or client")->capture_default_str();
  entropy->add_option("--task", ea.task)->check(CLI::IsMember({"mc", "open"}))->capture_default_str();
  entropy->add_option("--out", ea.out);
  entropy->callback([&] { run = [&] { return cmd_entropy(g, ea); }; });

  auto* idk = app.add_subcommand("idk", "Knowledge segmentation and refusal analysis");
  idk->require_subcommand(1);
  SegmentArgs sa;
  auto* seg = idk->add_subcommand("segment", "Label records IK/IDK from repeated answers");
  seg->add_option("path", sa.path)->required()->check(CLI::ExistingFile);
  seg->add_option("--task", sa.task)->check(CLI::IsMember({"mc", "open"}))->capture_default_str();
  seg->add_option("--threshold", sa.threshold)->capture_default_str();
  seg->add_flag("--query", sa.query, "Ask the model instead of reading logged samples");
  seg->add_option("--trials", sa.trials)->capture_default_str();
  seg->add_option("--temperature", sa.temperature)->capture_default_str();
  seg->add_option("--top-p", sa.top_p)->capture_default_str();
  seg->add_option("--trials-out", sa.trials_out, "Per-trial JSONL");
  seg->add_option("--out", sa.out, "Labels JSONL");
  seg->callback([&] { run = [&] { return cmd_idk_segment(g, sa); }; });
  QuadrantArgs qa;
  auto* quad = idk->add_subcommand("quadrants", "Quadrant counts and TRUTHFUL");
  quad->add_option("path", qa.path, "Records; the first sample is the answer unless --query")
      ->required()
      ->check(CLI::ExistingFile);
  quad->add_option("--task", qa.task)->check(CLI::IsMember({"mc", "open"}))->capture_default_str();
  quad->add_option("--labels", qa.labels, "Labels JSONL from `idk segment`");
  quad->add_flag("--ood", qa.ood, "Out-of-distribution set: every item is unknowable");
  quad->add_option("--prompting", qa.prompting, "Include the refusal instruction when querying")
      ->check(CLI::IsMember({"on", "off"}))
      ->capture_default_str();
  quad->add_flag("--query", qa.query, "Ask the model once per record");
  quad->add_option("--label", qa.label);
  quad->add_option("--format", qa.format, "text, csv or latex")->capture_default_str();
  quad->add_option("--out", qa.out, "Report JSON");
  quad->callback([&] { run = [&] { return cmd_idk_quadrants(g, qa); }; });
  BuildOodArgs ba;
  auto* ood = idk->add_subcommand("build-ood", "Generate multiple-choice questions from articles");
  ood->add_option("path", ba.path)->required()->check(CLI::ExistingFile);
  ood->add_option("--k", ba.k, "Questions per article")->capture_default_str();
  ood->add_option("--out", ba.out);
  ood->callback([&] { run = [&] { return cmd_idk_build_ood(g, ba); }; });

  SweepArgs swa;
  auto* sweep = app.add_subcommand("sweep", "Image noise x description length uncertainty grid");
  sweep->add_option("path", swa.path)->required()->check(CLI::ExistingFile);
  sweep->add_option("--sigmas", swa.sigmas, "Comma-separated noise std devs (pixel units)")->capture_default_str();
  sweep->add_option("--form", swa.form)->check(CLI::IsMember({"mc", "open"}))->capture_default_str();
  sweep->add_option("--samples", swa.samples, "Open-ended samples per cell")->capture_default_str();
  sweep->add_option("--out", swa.out, "Grid CSV");
  sweep->add_option("--raw", swa.raw, "Per-item JSONL");
  sweep->add_option("--dump-dir", swa.dump_dir, "Write noisy images here");
  sweep->callback([&] { run = [&] { return cmd_sweep(g, swa); }; });

  ApeArgs aa;
  auto* ape = app.add_subcommand("ape", "Search answer suffixes for accuracy and low ECE");
  ape->add_option("--seeds", aa.seeds, "One seed suffix per line")->required()->check(CLI::ExistingFile);
  ape->add_option("--eval", aa.eval, "Labeled multiple-choice records")->required()->check(CLI::ExistingFile);
  ape->add_option("--k", aa.k)->capture_default_str();
  ape->add_option("--m", aa.m)->capture_default_str();
  ape->add_option("--n", aa.n)->capture_default_str();
  ape->add_option("--band", aa.band)->capture_default_str();
  ape->add_option("--generator-model", aa.generator_model, "Model used for paraphrasing");
  ape->add_option("--template", aa.templ, "Paraphrase instruction file; {suffix} is substituted")
      ->check(CLI::ExistingFile);
  ape->add_option("--out", aa.out, "Trace JSON");
  ape->callback([&] { run = [&] { return cmd_ape(g, aa); }; });

  ReportArgs ra;
  auto* report = app.add_subcommand("report", "Render tables from metrics or quadrant JSON");
  report->add_option("kind", ra.kind, "metrics or quadrants")->required()->check(CLI::IsMember({"metrics", "quadrants"}));
  report->add_option("inputs", ra.inputs)->required()->check(CLI::ExistingFile);
  report->add_option("--format", ra.format, "text, csv or latex")->capture_default_str();
  report->add_option("--out", ra.out);
  report->callback([&] { run = [&] { return cmd_report(g, ra); }; });

  SimulateArgs sma;
  auto* sim = app.add_subcommand("simulate", "Write records from the calibrated-model simulator");
  sim->add_option("--n", sma.n)->capture_default_str();
  sim->add_option("--k", sma.k)->capture_default_str();
  sim->add_option("--accuracy", sma.accuracy, "identity, power:A or affine:A,B")->capture_default_str();
  sim->add_option("--confidence", sma.confidence, "uniform[:LO,HI], fixed:C or beta:A,B")->capture_default_str();
  sim->add_option("--scale", sma.scale, "Logit multiplier")->capture_default_str();
  sim->add_option("--model-id", sma.model_id)->capture_default_str();
  sim->add_option("--out", sma.out)->required();
  sim->callback([&] { run = [&] { return cmd_simulate(g, sma); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitInvalid;
  }

  try {
    return run();
  } catch (const IncompleteError& e) {
    std::cerr << "incomplete: " << e.what() << "\n";
    return kExitIncomplete;
  } catch (const ClientError& e) {
    std::cerr << "client error: " << e.what() << "\n";
    return kExitClient;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const Json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInvalid;
  }
}
