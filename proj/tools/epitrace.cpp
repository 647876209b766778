#include <CLI11.hpp>

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "epitrace/annotation_pipeline.hpp"
#include "epitrace/epi_graph.hpp"
#include "epitrace/error.hpp"
#include "epitrace/intervention.hpp"
#include "epitrace/irt2pl.hpp"
#include "epitrace/motif_engine.hpp"
#include "epitrace/server.hpp"
#include "epitrace/service.hpp"
#include "epitrace/stats.hpp"
#include "epitrace/trace.hpp"

namespace fs = std::filesystem;
using namespace epitrace;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

std::string env_or(const char* name, std::string fallback) {
  const char* v = std::getenv(name);
  return v && *v ? std::string(v) : std::move(fallback);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read_json_file(const fs::path& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ParseError(path.string(), e.what());
  }
}

// Writes to `out` atomically, or to stdout when `out` is empty.
void emit(const std::string& out, std::string text) {
  if (text.empty() || text.back() != '\n') text += '\n';
  if (out.empty()) {
    std::cout << text;
  } else {
    service::atomic_write(out, text);
  }
}

std::vector<trace::GroupField> group_fields(const std::vector<std::string>& names) {
  std::vector<trace::GroupField> out;
  for (const auto& n : names) {
    const auto f = trace::parse_group_field(n);
    if (!f) throw ValidationError("unknown grouping field '" + n + "'");
    out.push_back(*f);
  }
  return out;
}

std::string require_store(const std::string& root) {
  if (root.empty()) throw ValidationError("no store given; pass --store or set EPITRACE_STORE");
  return root;
}

// Traces from explicit paths, or every trace in the store.
trace::TraceCorpus corpus_from(const std::vector<std::string>& paths, const std::string& store_root) {
  if (paths.empty()) return service::Store(require_store(store_root)).corpus();
  trace::TraceCorpus corpus;
  for (const auto& p : paths) {
    const auto loaded = trace::load_corpus(p);
    for (const auto& t : loaded.traces()) corpus.add(t);
  }
  return corpus;
}

std::vector<std::string> selected_ids(const service::Store& store, const std::vector<std::string>& ids) {
  if (!ids.empty()) return ids;
  std::vector<std::string> out;
  for (const auto& m : store.list_metadata()) out.push_back(m["trace_id"].get<std::string>());
  return out;
}

std::pair<std::string, int> split_bind(const std::string& bind) {
  const auto colon = bind.rfind(':');
  if (colon == std::string::npos) throw ValidationError("bind address must be host:port, got '" + bind + "'");
  try {
    return {bind.substr(0, colon), std::stoi(bind.substr(colon + 1))};
  } catch (const std::exception&) {
    throw ValidationError("bad port in bind address '" + bind + "'");
  }
}

std::vector<stats::LabelPair> read_label_pairs(const fs::path& path) {
  std::istringstream in(read_file(path));
  std::vector<stats::LabelPair> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || (lineno == 1 && !std::isdigit(static_cast<unsigned char>(line[0])))) continue;
    const auto comma = line.find(',');
    const auto a = line.substr(0, comma);
    const auto b = comma == std::string::npos ? "" : line.substr(comma + 1);
    auto bit = [&](const std::string& v) {
      if (v == "1") return true;
      if (v == "0") return false;
      throw ParseError(path.string() + ":" + std::to_string(lineno), "expected two 0/1 columns");
    };
    out.push_back({bit(a), bit(b)});
  }
  return out;
}

ordered_json optional_number(const std::optional<double>& v) { return v ? ordered_json(*v) : ordered_json(nullptr); }

struct Options {
  std::string store = env_or("EPITRACE_STORE", "");
  std::string out;

  // ingest, motifs, prevalence, logprob, intervene-build
  std::vector<std::string> paths;

  // annotate
  std::vector<std::string> trace_ids;
  std::string endpoint;
  std::string annotator_model;
  std::size_t window = 20;
  std::size_t stride = 15;
  std::size_t max_in_flight = 4;
  int max_retries = 2;
  double temperature = 0.7;
  std::string prompt_version = "v1";
  bool strict = false;
  std::optional<std::size_t> schema_threshold;

  // validate
  std::string graph_file;
  std::string trace_file;
  std::string ledger_out;

  // prevalence, logprob, report
  std::vector<std::string> group_by;
  bool pooled = false;
  std::string format = "tsv";
  int precision = 2;

  // passk
  std::int64_t trials = 0;
  std::int64_t successes = 0;
  std::vector<std::int64_t> ks;
  bool plug_in = false;

  // agreement
  std::string labels_file;
  std::optional<double> percent;

  // irt-fit
  std::string responses;
  int max_iters = 50000;
  double tolerance = 1e-6;

  // intervene-build
  std::string registry_in;
  std::string registry_out;
  std::string environment;
  std::string agent;
  std::string task;
  std::string kind = "success";
  int k = 0;
  std::uint64_t seed = 0;
  std::string tool_server;
  double min_rate = 0.2;
  double max_rate = 0.8;

  // serve
  std::string bind = env_or("EPITRACE_BIND", "127.0.0.1:8080");
  std::string token = env_or("EPITRACE_TOKEN", "");
};

int cmd_ingest(const Options& o) {
  service::Store store(require_store(o.store));
  std::size_t n = 0;
  for (const auto& p : o.paths) {
    const auto loaded = trace::load_corpus(p);
    for (const auto& t : loaded.traces()) {
      store.put_trace(t);
      ++n;
    }
  }
  std::cerr << "ingested " << n << " traces into " << store.root().string() << "\n";
  return 0;
}

int cmd_annotate(const Options& o) {
  service::Store store(require_store(o.store));
  annotate::AnnotatorConfig cfg = annotate::config_from_env();
  if (!o.endpoint.empty()) cfg.endpoint = o.endpoint;
  if (!o.annotator_model.empty()) cfg.model_name = o.annotator_model;
  cfg.temperature = o.temperature;
  cfg.max_retries = o.max_retries;
  cfg.max_in_flight = o.max_in_flight;
  cfg.prompt_version = o.prompt_version;
  auto client = annotate::make_http_client(cfg);
  graph::ValidationOptions validation;
  validation.strict = o.strict;
  validation.schema_violation_discard_threshold = o.schema_threshold;
  const annotate::WindowSpec spec{o.window, o.stride};
  annotate::check(spec);

  ordered_json summary = ordered_json::array();
  for (const auto& id : selected_ids(store, o.trace_ids)) {
    const auto t = store.get_trace(id);
    if (!t) throw ValidationError("unknown trace '" + id + "'");
    const auto result = annotate::annotate_trace(*t, cfg, spec, *client, validation);
    store.put_graph(result.graph, result.ledger);
    store.put_motifs(id, motif::detect(result.graph));
    summary.push_back({{"trace_id", id},
                       {"nodes", result.graph.nodes.size()},
                       {"edges", result.graph.edges.size()},
                       {"warnings", result.ledger.entries.size()},
                       {"discarded", result.discarded}});
  }
  emit(o.out, summary.dump(2));
  return 0;
}

int cmd_validate(const Options& o) {
  const auto g = graph::graph_from_json(read_json_file(o.graph_file));
  const auto t = trace::parse_trace(read_file(o.trace_file));
  graph::ValidationOptions options;
  options.strict = o.strict;
  options.schema_violation_discard_threshold = o.schema_threshold;
  const auto result = graph::validate_graph(g, t, options);
  emit(o.out, graph::to_json(result.graph).dump(2));
  const auto ledger = graph::to_json(result.ledger).dump(2);
  if (o.ledger_out.empty()) {
    std::cerr << ledger << "\n";
  } else {
    emit(o.ledger_out, ledger);
  }
  if (result.discarded) {
    std::cerr << "graph discarded\n";
    return static_cast<int>(ExitCode::kValidation);
  }
  return 0;
}

int cmd_motifs(const Options& o) {
  if (!o.graph_file.empty()) {
    const auto g = graph::graph_from_json(read_json_file(o.graph_file));
    emit(o.out, motif::hits_to_json(g.trace_id, motif::detect(g)).dump(2));
    return 0;
  }
  service::Store store(require_store(o.store));
  std::size_t n = 0;
  for (const auto& id : selected_ids(store, o.trace_ids)) {
    const auto doc = store.get_graph(id);
    if (!doc) continue;
    store.put_motifs(id, motif::detect(graph::graph_from_json(*doc)));
    ++n;
  }
  std::cerr << "motif results written for " << n << " traces\n";
  return 0;
}

int cmd_prevalence(const Options& o) {
  service::Store store(require_store(o.store));
  const auto corpus = o.paths.empty() ? store.corpus() : corpus_from(o.paths, o.store);
  const auto fields = group_fields(o.group_by);
  motif::PrevalenceOptions options;
  options.average_over_environments = !o.pooled;
  const auto report = motif::prevalence(store.all_motifs(), corpus, fields, options);
  emit(o.out, o.format == "json" ? motif::to_json(report).dump(2) : motif::to_tsv(report, o.precision));
  return 0;
}

int cmd_passk(const Options& o) {
  const stats::TrialTally tally{o.trials, o.successes};
  stats::check(tally);
  const auto estimator = o.plug_in ? stats::PassHatEstimator::kPlugIn : stats::PassHatEstimator::kHypergeometric;
  ordered_json rows = ordered_json::array();
  for (const auto k : o.ks) {
    rows.push_back({{"n", o.trials},
                    {"c", o.successes},
                    {"k", k},
                    {"pass_at_k", stats::pass_at_k(tally, k)},
                    {"pass_hat_k", stats::pass_hat_k(tally, k, estimator)}});
  }
  emit(o.out, rows.dump(2));
  return 0;
}

int cmd_agreement(const Options& o) {
  if (o.percent) {
    emit(o.out, ordered_json{{"percent_agreement", *o.percent}, {"pabak", stats::pabak_from_agreement(*o.percent)}}
                    .dump(2));
    return 0;
  }
  if (o.labels_file.empty()) throw ValidationError("give --labels or --percent");
  const auto a = stats::agreement(read_label_pairs(o.labels_file));
  emit(o.out, ordered_json{{"items", a.items},
                           {"percent_agreement", a.percent_agreement},
                           {"expected_agreement", a.expected_agreement},
                           {"kappa", optional_number(a.kappa)},
                           {"pabak", a.pabak}}
                  .dump(2));
  return 0;
}

int cmd_logprob(const Options& o) {
  const auto corpus = corpus_from(o.paths, o.store);
  const auto fields = group_fields(o.group_by);
  ordered_json doc = ordered_json::object();
  for (const auto& [label, pool] : stats::pool_logprobs(corpus.traces(), fields)) {
    doc[label] = {{"mean_logprob", optional_number(pool.mean)},
                  {"tokens", pool.tokens},
                  {"excluded", pool.excluded},
                  {"traces", pool.traces},
                  {"messages_without_logprobs", pool.messages_without_logprobs}};
  }
  emit(o.out, doc.dump(2));
  return 0;
}

int cmd_irt(const Options& o) {
  const auto rows = irt::load_responses_csv(o.responses);
  irt::IrtConfig cfg;
  cfg.max_iters = o.max_iters;
  cfg.tolerance = o.tolerance;
  ordered_json doc = ordered_json::object();
  bool all_converged = true;
  for (const auto& [set, fit] : irt::fit_item_sets(rows, cfg)) {
    doc[set] = irt::to_json(fit);
    all_converged = all_converged && fit.converged;
  }
  emit(o.out, doc.dump(2));
  if (!all_converged) std::cerr << "warning: at least one item set did not converge\n";
  return 0;
}

int cmd_intervene(const Options& o) {
  const auto corpus = corpus_from(o.paths, o.store);
  intervention::RegistryOptions ropts;
  ropts.min_success_rate = o.min_rate;
  ropts.max_success_rate = o.max_rate;
  const auto registry = o.registry_in.empty() ? intervention::TraceRegistry::build(corpus, ropts)
                                              : intervention::TraceRegistry::from_json(read_json_file(o.registry_in), corpus);
  if (!o.registry_out.empty()) emit(o.registry_out, registry.to_json().dump(2));
  if (o.k == 0) {
    if (o.registry_out.empty()) emit(o.out, registry.to_json().dump(2));
    return 0;
  }
  const auto kind = intervention::parse_pool_kind(o.kind);
  if (!kind) throw ValidationError("intervention kind must be 'success' or 'failed'");
  const intervention::InterventionSpec spec{*kind, o.k, o.seed};
  const intervention::RegistryKey key{o.environment, o.agent, o.task};
  const auto& source = registry.sample(key, spec);
  std::unique_ptr<intervention::ToolExecutor> executor;
  if (o.tool_server.empty()) {
    executor = std::make_unique<intervention::ReplayExecutor>(source);
  } else {
    executor = intervention::make_http_executor(o.tool_server);
  }
  const auto history = intervention::build_seed_history(source, spec, *executor);
  if (const auto problem = intervention::check_interleaving(history)) throw InterventionError(*problem);
  emit(o.out, intervention::to_json(history, source).dump(2));
  return 0;
}

int cmd_serve(const Options& o) {
  service::Store store(require_store(o.store));
  service::ApiServer server(store, service::ServerOptions{o.token});
  const auto [host, port] = split_bind(o.bind);
  const int bound = server.bind(host, port);
  if (bound <= 0) throw Error("cannot bind " + o.bind);

  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&signals, &sig);
    server.stop();
  });
  waiter.detach();

  std::cerr << "serving " << store.root().string() << " on " << host << ":" << bound << "\n";
  return server.run() ? 0 : 1;
}

int cmd_report(const Options& o) {
  service::Store store(require_store(o.store));
  const auto fields = group_fields(o.group_by);
  const auto annotations = store.latest_annotations();
  const auto table = service::marker_counts(annotations, store.corpus(), fields);
  emit(o.out, service::to_tsv(table));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Epistemic trace analysis toolkit"};
  app.require_subcommand(1);
  Options o;
  std::function<int(const Options&)> command;

  auto add = [&](const std::string& name, const std::string& help, int (*fn)(const Options&)) {
    auto* sub = app.add_subcommand(name, help);
    sub->callback([&command, fn] { command = fn; });
    return sub;
  };
  auto store_opt = [&](CLI::App* sub) {
    sub->add_option("--store", o.store, "Store directory (EPITRACE_STORE)");
  };
  auto out_opt = [&](CLI::App* sub) { sub->add_option("-o,--out", o.out, "Output file; stdout when omitted"); };
  auto ids_opt = [&](CLI::App* sub) { sub->add_option("--trace", o.trace_ids, "Trace ids; all when omitted"); };
  auto validation_opts = [&](CLI::App* sub) {
    sub->add_flag("--strict", o.strict, "Discard a graph on any failed check");
    sub->add_option("--schema-discard-threshold", o.schema_threshold, "Discard after this many schema violations");
  };

  auto* ingest = add("ingest", "Parse traces and add them to the store", cmd_ingest);
  store_opt(ingest);
  ingest->add_option("paths", o.paths, "Trace files, .jsonl streams or directories")->required();

  auto* ann = add("annotate", "Build epistemic graphs with the annotator", cmd_annotate);
  store_opt(ann);
  out_opt(ann);
  ids_opt(ann);
  ann->add_option("--endpoint", o.endpoint, "Chat-completions URL (EPITRACE_ANNOTATOR_URL)");
  ann->add_option("--model", o.annotator_model, "Annotator model (EPITRACE_ANNOTATOR_MODEL)");
  ann->add_option("--window", o.window, "Messages per window")->capture_default_str();
  ann->add_option("--stride", o.stride, "Window stride")->capture_default_str();
  ann->add_option("--max-in-flight", o.max_in_flight, "Concurrent requests")->capture_default_str();
  ann->add_option("--max-retries", o.max_retries, "Retries on unparseable output")->capture_default_str();
  ann->add_option("--temperature", o.temperature, "Sampling temperature")->capture_default_str();
  ann->add_option("--prompt-version", o.prompt_version, "Prompt asset version")->capture_default_str();
  validation_opts(ann);

  auto* val = add("validate", "Validate a graph against its trace", cmd_validate);
  val->add_option("--graph", o.graph_file, "Graph document")->required();
  val->add_option("--trace", o.trace_file, "Trace document")->required();
  val->add_option("--ledger", o.ledger_out, "Ledger output; stderr when omitted");
  out_opt(val);
  validation_opts(val);

  auto* mot = add("motifs", "Detect motifs in a graph or in every stored graph", cmd_motifs);
  mot->add_option("--graph", o.graph_file, "Graph document");
  store_opt(mot);
  ids_opt(mot);
  out_opt(mot);

  auto* prev = add("prevalence", "Motif prevalence per group", cmd_prevalence);
  store_opt(prev);
  out_opt(prev);
  prev->add_option("--group-by", o.group_by, "Grouping fields")->delimiter(',')->default_val("model");
  prev->add_flag("--pooled", o.pooled, "Pool traces instead of averaging over environments");
  prev->add_option("--format", o.format, "tsv or json")->check(CLI::IsMember({"tsv", "json"}))->capture_default_str();
  prev->add_option("--precision", o.precision, "Decimals in TSV output")->capture_default_str();
  prev->add_option("--traces", o.paths, "Trace metadata source instead of the store");

  auto* pk = add("passk", "Pass@k and Pass^k from trial counts", cmd_passk);
  pk->add_option("-n,--trials", o.trials, "Trials")->required();
  pk->add_option("-c,--successes", o.successes, "Successful trials")->required();
  pk->add_option("-k", o.ks, "Sample sizes")->required();
  pk->add_flag("--plug-in", o.plug_in, "Use (c/n)^k for Pass^k");
  out_opt(pk);

  auto* agr = add("agreement", "Inter-rater agreement for binary labels", cmd_agreement);
  agr->add_option("--labels", o.labels_file, "CSV with two 0/1 columns");
  agr->add_option("--percent", o.percent, "Observed agreement rate in [0, 1]")->check(CLI::Range(0.0, 1.0));
  out_opt(agr);

  auto* lp = add("logprob", "Mean top-1 token log-probability per group", cmd_logprob);
  lp->add_option("paths", o.paths, "Trace files or directories; the store when omitted");
  store_opt(lp);
  lp->add_option("--group-by", o.group_by, "Grouping fields")->delimiter(',')->default_val("environment");
  out_opt(lp);

  auto* irt_cmd = add("irt-fit", "Fit the two-parameter logistic model per item set", cmd_irt);
  irt_cmd->add_option("responses", o.responses, "Response CSV")->required();
  irt_cmd->add_option("--max-iters", o.max_iters, "Iteration cap")->capture_default_str();
  irt_cmd->add_option("--tolerance", o.tolerance, "Gradient max-norm tolerance")->capture_default_str();
  out_opt(irt_cmd);

  auto* iv = add("intervene-build", "Build the trace registry and seeded histories", cmd_intervene);
  iv->add_option("paths", o.paths, "Trace files or directories; the store when omitted");
  store_opt(iv);
  iv->add_option("--registry", o.registry_in, "Existing registry document");
  iv->add_option("--registry-out", o.registry_out, "Write the registry here");
  iv->add_option("--environment", o.environment, "Registry environment");
  iv->add_option("--agent", o.agent, "Registry agent (model or model/scaffold)");
  iv->add_option("--task", o.task, "Registry task id");
  iv->add_option("--kind", o.kind, "success or failed")->capture_default_str();
  iv->add_option("-k", o.k, "Step index; 0 only builds the registry")->capture_default_str();
  iv->add_option("--seed", o.seed, "Sampling seed")->capture_default_str();
  iv->add_option("--tool-server", o.tool_server, "Live tool endpoint; replay when omitted");
  iv->add_option("--min-rate", o.min_rate, "Lowest admitted success rate")->capture_default_str();
  iv->add_option("--max-rate", o.max_rate, "Highest admitted success rate")->capture_default_str();
  out_opt(iv);

  auto* srv = add("serve", "Serve the store over HTTP", cmd_serve);
  store_opt(srv);
  srv->add_option("--bind", o.bind, "host:port (EPITRACE_BIND)")->capture_default_str();
  srv->add_option("--token", o.token, "Shared bearer token (EPITRACE_TOKEN)");

  auto* rep = add("report", "Marker counts from stored annotations", cmd_report);
  store_opt(rep);
  rep->add_option("--group-by", o.group_by, "Grouping fields")->delimiter(',')->default_val("model,scaffold");
  out_opt(rep);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ExitCode::kValidation);
  }

  try {
    return command(o);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.exit_code());
  } catch (const json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::kValidation);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::kFailure);
  }
}
