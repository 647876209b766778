#include "epitrace/service.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cctype>
#include <iomanip>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include <unistd.h>

namespace epitrace::service {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

using C = MarkerCategory;

constexpr std::array<Marker, 20> kMarkers = {{
    {"validation_attempt", C::kPositive, "Checks a result or an intermediate output."},
    {"backtrack_trigger", C::kPositive, "Notices the current approach is stuck and switches to another."},
    {"planning_statement", C::kPositive, "States a plan or subgoal before acting on it."},
    {"reasoning_statement", C::kPositive, "Spells out reasoning that links hypotheses and evidence."},
    {"correct_submission", C::kPositive, "Submits the final answer in the requested format."},
    {"todo_list", C::kPositive, "Refers to a structured list of remaining tasks."},
    {"neutral", C::kNeutral, "Nothing noteworthy happens in this step."},
    {"missing_validation", C::kNegative, "Skips a check the situation called for."},
    {"unnecessary_tool_use", C::kNegative, "Calls a tool that was not needed."},
    {"non_sense", C::kNegative, "Produces incoherent or self-contradictory output."},
    {"loop_instance", C::kNegative, "Repeats tool calls without using anything new."},
    {"hallucination", C::kNegative, "States content that is invented or unjustified."},
    {"wrong_planning", C::kNegative, "Lays out a plan that is factually or logically wrong."},
    {"wrong_reasoning", C::kNegative, "Reasons toward a conclusion that is wrong."},
    {"syntax_error", C::kNegative, "Emits malformed output or tool syntax."},
    {"early_final_answer", C::kNegative, "Submits an answer before it is adequately justified."},
    {"give_up", C::kNegative, "Declares that the task cannot be solved."},
    {"inefficient_tool_call", C::kNegative, "Uses the right tool with a vague or weak query."},
    {"iteration_limit", C::kNegative, "Runs into the maximum number of iterations."},
    {"misunderstood_tool", C::kNegative, "Uses a tool in a way that contradicts what the tool does."},
}};

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::optional<json> read_json(const fs::path& path) {
  std::error_code ec;
  if (!fs::is_regular_file(path, ec)) return std::nullopt;
  return json::parse(read_file(path));
}

std::string revision_name(int revision) {
  std::ostringstream os;
  os << "rev-" << std::setw(6) << std::setfill('0') << revision << ".json";
  return os.str();
}

std::optional<int> parse_revision_name(const std::string& name) {
  if (name.size() != 15 || name.rfind("rev-", 0) != 0 || name.substr(10) != ".json") return std::nullopt;
  const auto digits = name.substr(4, 6);
  if (!std::all_of(digits.begin(), digits.end(), [](char c) { return c >= '0' && c <= '9'; })) return std::nullopt;
  return std::stoi(digits);
}

std::string decode_id(std::string_view encoded) {
  std::string out;
  for (std::size_t i = 0; i < encoded.size(); ++i) {
    if (encoded[i] == '%' && i + 2 < encoded.size()) {
      out += static_cast<char>(std::stoi(std::string(encoded.substr(i + 1, 2)), nullptr, 16));
      i += 2;
    } else {
      out += encoded[i];
    }
  }
  return out;
}

ordered_json metadata_json(const trace::Trace& t) {
  return {{"trace_id", t.trace_id}, {"model", t.model},     {"environment", t.environment},
          {"scope", t.scope},       {"scaffold", t.scaffold}, {"task_id", t.task_id},
          {"trial", t.trial},       {"outcome_score", t.outcome_score},
          {"message_count", t.messages.size()}};
}

bool metadata_matches(const json& meta, const TraceFilter& filter) {
  for (const auto& [field, value] : filter.equals) {
    const std::string key(trace::to_string(field));
    if (!meta.contains(key)) return false;
    const auto& v = meta[key];
    const std::string text = v.is_string() ? v.get<std::string>() : v.dump();
    if (text != value) return false;
  }
  return true;
}

}  // namespace

std::string_view to_string(MarkerCategory category) {
  switch (category) {
    case MarkerCategory::kPositive: return "positive";
    case MarkerCategory::kNeutral: return "neutral";
    case MarkerCategory::kNegative: return "negative";
  }
  return "unknown";
}

std::span<const Marker> marker_taxonomy() { return kMarkers; }

const Marker* find_marker(std::string_view id) {
  for (const auto& m : kMarkers) {
    if (m.id == id) return &m;
  }
  return nullptr;
}

ordered_json taxonomy_json() {
  ordered_json doc;
  auto& markers = doc["markers"] = ordered_json::array();
  for (const auto& m : kMarkers) {
    markers.push_back({{"id", m.id}, {"category", to_string(m.category)}, {"definition", m.definition}});
  }
  return doc;
}

ordered_json to_json(const MarkerAnnotation& a) {
  ordered_json doc;
  doc["trace_id"] = a.trace_id;
  doc["annotator_id"] = a.annotator_id;
  doc["revision"] = a.revision;
  doc["submitted"] = a.submitted;
  doc["trace_note"] = a.trace_note ? ordered_json(*a.trace_note) : ordered_json(nullptr);
  auto& nodes = doc["nodes"] = ordered_json::array();
  for (const auto& n : a.nodes) {
    nodes.push_back({{"msg_idx", n.msg_idx},
                     {"markers", n.markers},
                     {"note", n.note ? ordered_json(*n.note) : ordered_json(nullptr)}});
  }
  return doc;
}

MarkerAnnotation annotation_from_json(const json& doc) {
  if (!doc.is_object()) throw ParseError("$", "annotation must be an object");
  MarkerAnnotation a;
  auto optional_string = [](const json& obj, const char* key, const std::string& field) -> std::optional<std::string> {
    if (!obj.contains(key) || obj[key].is_null()) return std::nullopt;
    if (!obj[key].is_string()) throw ParseError(field, "expected a string or null");
    return obj[key].get<std::string>();
  };
  a.trace_id = optional_string(doc, "trace_id", "trace_id").value_or("");
  a.annotator_id = optional_string(doc, "annotator_id", "annotator_id").value_or("");
  if (doc.contains("revision") && !doc["revision"].is_null()) {
    if (!doc["revision"].is_number_integer()) throw ParseError("revision", "expected an integer");
    a.revision = doc["revision"].get<int>();
  }
  if (doc.contains("submitted")) {
    if (!doc["submitted"].is_boolean()) throw ParseError("submitted", "expected a boolean");
    a.submitted = doc["submitted"].get<bool>();
  }
  a.trace_note = optional_string(doc, "trace_note", "trace_note");
  if (doc.contains("nodes")) {
    if (!doc["nodes"].is_array()) throw ParseError("nodes", "expected an array");
    for (std::size_t i = 0; i < doc["nodes"].size(); ++i) {
      const auto& n = doc["nodes"][i];
      const auto field = "nodes[" + std::to_string(i) + "]";
      if (!n.is_object()) throw ParseError(field, "expected an object");
      if (!n.contains("msg_idx") || !n["msg_idx"].is_number_integer()) {
        throw ParseError(field + ".msg_idx", "expected an integer");
      }
      NodeMarkers nm;
      nm.msg_idx = n["msg_idx"].get<int>();
      if (n.contains("markers")) {
        if (!n["markers"].is_array()) throw ParseError(field + ".markers", "expected an array");
        for (std::size_t k = 0; k < n["markers"].size(); ++k) {
          if (!n["markers"][k].is_string()) {
            throw ParseError(field + ".markers[" + std::to_string(k) + "]", "expected a string");
          }
          nm.markers.push_back(n["markers"][k].get<std::string>());
        }
      }
      nm.note = optional_string(n, "note", field + ".note");
      a.nodes.push_back(std::move(nm));
    }
  }
  return a;
}

std::string serialize(const MarkerAnnotation& annotation) { return to_json(annotation).dump(2) + "\n"; }

std::vector<int> completeness_gaps(const MarkerAnnotation& annotation, const trace::Trace& trace) {
  if (annotation.trace_id != trace.trace_id) {
    throw StructuralError("annotation for '" + annotation.trace_id + "' checked against trace '" + trace.trace_id + "'");
  }
  std::set<int> marked;
  for (const auto& n : annotation.nodes) {
    if (!n.markers.empty()) marked.insert(n.msg_idx);
  }
  std::vector<int> gaps;
  for (const auto& m : trace::annotatable_messages(trace, trace::AnnotationMode::kMarker)) {
    if (!marked.contains(m.index)) gaps.push_back(m.index);
  }
  return gaps;
}

bool check_submission_completeness(const MarkerAnnotation& annotation, const trace::Trace& trace) {
  return completeness_gaps(annotation, trace).empty();
}

void validate_annotation(const MarkerAnnotation& annotation, const trace::Trace& trace) {
  if (annotation.trace_id != trace.trace_id) {
    throw ValidationError("annotation trace_id '" + annotation.trace_id + "' does not match '" + trace.trace_id + "'");
  }
  if (annotation.annotator_id.empty()) throw ValidationError("annotation has no annotator_id");
  std::set<int> annotatable;
  for (const auto& m : trace::annotatable_messages(trace, trace::AnnotationMode::kMarker)) annotatable.insert(m.index);
  std::set<int> seen;
  for (const auto& n : annotation.nodes) {
    if (!seen.insert(n.msg_idx).second) {
      throw ValidationError("message " + std::to_string(n.msg_idx) + " is annotated twice");
    }
    if (!annotatable.contains(n.msg_idx)) {
      throw ValidationError("message " + std::to_string(n.msg_idx) + " is not marker-annotatable");
    }
    for (const auto& id : n.markers) {
      if (!find_marker(id)) throw ValidationError("unknown marker '" + id + "'");
    }
  }
}

namespace {

std::string join_ints(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + std::to_string(v[i]);
  return out;
}

}  // namespace

IncompleteError::IncompleteError(std::vector<int> gaps)
    : ValidationError("messages without a marker: " + join_ints(gaps)), gaps_(std::move(gaps)) {}

ConflictError::ConflictError(int expected, int actual)
    : Error("expected revision " + std::to_string(expected) + " but the latest is " + std::to_string(actual)),
      actual_(actual) {}

std::string encode_id(std::string_view id) {
  static constexpr char kHex[] = "0123456789ABCDEF";
  std::string out;
  for (const char ch : id) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || c == '_' || c == '-') {
      out += ch;
    } else {
      out += '%';
      out += kHex[c >> 4];
      out += kHex[c & 0xF];
    }
  }
  return out;
}

void atomic_write(const fs::path& path, std::string_view content) {
  static std::atomic<unsigned> counter{0};
  fs::create_directories(path.parent_path());
  std::ostringstream tmp_name;
  tmp_name << "." << path.filename().string() << ".tmp-" << ::getpid() << "-"
           << std::hash<std::thread::id>{}(std::this_thread::get_id()) << "-" << counter++;
  const auto tmp = path.parent_path() / tmp_name.str();
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) throw Error("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

Store::Store(fs::path root) : root_(std::move(root)) {
  for (const auto* sub : {"traces", "graphs", "motifs", "annotations"}) fs::create_directories(root_ / sub);
  if (!fs::exists(root_ / "index.json")) {
    atomic_write(root_ / "index.json", ordered_json{{"traces", ordered_json::object()}}.dump(2) + "\n");
  }
}

fs::path Store::trace_path(std::string_view id) const { return root_ / "traces" / (encode_id(id) + ".json"); }

fs::path Store::annotation_dir(std::string_view trace_id, std::string_view annotator_id) const {
  return root_ / "annotations" / encode_id(trace_id) / encode_id(annotator_id);
}

std::mutex& Store::key_lock(const std::string& key) {
  std::lock_guard guard(locks_mutex_);
  auto& slot = locks_[key];
  if (!slot) slot = std::make_unique<std::mutex>();
  return *slot;
}

json Store::read_index() const {
  auto doc = read_json(root_ / "index.json");
  if (!doc || !doc->contains("traces")) return json{{"traces", json::object()}};
  return *doc;
}

void Store::update_index(const trace::Trace& t) {
  std::lock_guard guard(index_mutex_);
  ordered_json index = ordered_json::parse(read_index().dump());
  index["traces"][t.trace_id] = metadata_json(t);
  atomic_write(root_ / "index.json", index.dump(2) + "\n");
}

void Store::put_trace(const trace::Trace& t) {
  atomic_write(trace_path(t.trace_id), trace::render_trace(t) + "\n");
  update_index(t);
}

std::optional<trace::Trace> Store::get_trace(std::string_view trace_id) const {
  const auto path = trace_path(trace_id);
  std::error_code ec;
  if (!fs::is_regular_file(path, ec)) return std::nullopt;
  return trace::parse_trace(read_file(path));
}

std::vector<trace::Trace> Store::list_traces(const TraceFilter& filter) const {
  std::vector<trace::Trace> out;
  const auto index = read_index();
  for (const auto& [id, meta] : index["traces"].items()) {
    if (!metadata_matches(meta, filter)) continue;
    if (auto t = get_trace(id)) out.push_back(std::move(*t));
  }
  return out;
}

trace::TraceCorpus Store::corpus() const { return trace::TraceCorpus(list_traces()); }

ordered_json Store::list_metadata(const TraceFilter& filter) const {
  ordered_json out = ordered_json::array();
  const auto index = read_index();
  for (const auto& [id, meta] : index["traces"].items()) {
    if (metadata_matches(meta, filter)) out.push_back(ordered_json::parse(meta.dump()));
  }
  return out;
}

void Store::put_graph(const graph::EpistemicGraph& g, const graph::WarningLedger& ledger) {
  const auto stem = encode_id(g.trace_id);
  atomic_write(root_ / "graphs" / (stem + ".json"), graph::to_json(g).dump(2) + "\n");
  atomic_write(root_ / "graphs" / (stem + ".ledger.json"), graph::to_json(ledger).dump(2) + "\n");
}

std::optional<json> Store::get_graph(std::string_view trace_id) const {
  return read_json(root_ / "graphs" / (encode_id(trace_id) + ".json"));
}

std::optional<json> Store::get_ledger(std::string_view trace_id) const {
  return read_json(root_ / "graphs" / (encode_id(trace_id) + ".ledger.json"));
}

void Store::put_motifs(std::string_view trace_id, const std::vector<motif::MotifHit>& hits) {
  atomic_write(root_ / "motifs" / (encode_id(trace_id) + ".json"), motif::hits_to_json(trace_id, hits).dump(2) + "\n");
}

std::optional<json> Store::get_motifs(std::string_view trace_id) const {
  return read_json(root_ / "motifs" / (encode_id(trace_id) + ".json"));
}

std::map<std::string, std::vector<motif::MotifHit>> Store::all_motifs() const {
  std::map<std::string, std::vector<motif::MotifHit>> out;
  for (const auto& entry : fs::directory_iterator(root_ / "motifs")) {
    if (entry.path().extension() != ".json") continue;
    auto [id, hits] = motif::hits_from_json(json::parse(read_file(entry.path())));
    out.emplace(std::move(id), std::move(hits));
  }
  return out;
}

std::vector<int> Store::annotation_revisions(std::string_view trace_id, std::string_view annotator_id) const {
  std::vector<int> revs;
  const auto dir = annotation_dir(trace_id, annotator_id);
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) return revs;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (const auto r = parse_revision_name(entry.path().filename().string())) revs.push_back(*r);
  }
  std::sort(revs.begin(), revs.end());
  return revs;
}

int Store::store_annotation(MarkerAnnotation annotation, std::optional<int> expected_revision) {
  const auto t = get_trace(annotation.trace_id);
  if (!t) throw NotFoundError("unknown trace '" + annotation.trace_id + "'");
  validate_annotation(annotation, *t);
  if (annotation.submitted) {
    auto gaps = completeness_gaps(annotation, *t);
    if (!gaps.empty()) throw IncompleteError(std::move(gaps));
  }
  std::sort(annotation.nodes.begin(), annotation.nodes.end(),
            [](const NodeMarkers& a, const NodeMarkers& b) { return a.msg_idx < b.msg_idx; });

  std::lock_guard guard(key_lock(annotation.trace_id + "\n" + annotation.annotator_id));
  const auto revs = annotation_revisions(annotation.trace_id, annotation.annotator_id);
  const int latest = revs.empty() ? 0 : revs.back();
  if (expected_revision && *expected_revision != latest) throw ConflictError(*expected_revision, latest);
  annotation.revision = latest + 1;
  atomic_write(annotation_dir(annotation.trace_id, annotation.annotator_id) / revision_name(annotation.revision),
               serialize(annotation));
  return annotation.revision;
}

int Store::submit_annotation(std::string_view trace_id, std::string_view annotator_id) {
  auto latest = latest_annotation(trace_id, annotator_id);
  if (!latest) throw NotFoundError("no annotation stored for this trace and annotator");
  const int expected = latest->revision;
  latest->submitted = true;
  return store_annotation(std::move(*latest), expected);
}

std::optional<std::string> Store::annotation_document(std::string_view trace_id, std::string_view annotator_id,
                                                      std::optional<int> revision) const {
  int rev = 0;
  if (revision) {
    rev = *revision;
  } else {
    const auto revs = annotation_revisions(trace_id, annotator_id);
    if (revs.empty()) return std::nullopt;
    rev = revs.back();
  }
  const auto path = annotation_dir(trace_id, annotator_id) / revision_name(rev);
  std::error_code ec;
  if (!fs::is_regular_file(path, ec)) return std::nullopt;
  return read_file(path);
}

std::optional<MarkerAnnotation> Store::latest_annotation(std::string_view trace_id,
                                                         std::string_view annotator_id) const {
  const auto doc = annotation_document(trace_id, annotator_id);
  if (!doc) return std::nullopt;
  return annotation_from_json(json::parse(*doc));
}

std::vector<MarkerAnnotation> Store::latest_annotations() const {
  std::vector<MarkerAnnotation> out;
  const auto base = root_ / "annotations";
  for (const auto& trace_dir : fs::directory_iterator(base)) {
    if (!trace_dir.is_directory()) continue;
    for (const auto& annotator_dir : fs::directory_iterator(trace_dir.path())) {
      if (!annotator_dir.is_directory()) continue;
      const auto trace_id = decode_id(trace_dir.path().filename().string());
      const auto annotator = decode_id(annotator_dir.path().filename().string());
      if (auto a = latest_annotation(trace_id, annotator)) out.push_back(std::move(*a));
    }
  }
  std::sort(out.begin(), out.end(), [](const MarkerAnnotation& a, const MarkerAnnotation& b) {
    return std::tie(a.trace_id, a.annotator_id) < std::tie(b.trace_id, b.annotator_id);
  });
  return out;
}

MarkerCountTable marker_counts(std::span<const MarkerAnnotation> annotations, const trace::TraceCorpus& corpus,
                               std::span<const trace::GroupField> group_by) {
  MarkerCountTable table;
  for (const auto& m : kMarkers) table.markers.emplace_back(m.id);
  std::map<std::string, std::map<std::string, std::size_t>> by_group;
  for (const auto& a : annotations) {
    const auto* t = corpus.find(a.trace_id);
    if (!t) continue;
    auto& cell = by_group[trace::group_label(*t, group_by)];
    for (const auto& n : a.nodes) {
      const std::set<std::string> unique(n.markers.begin(), n.markers.end());
      for (const auto& id : unique) ++cell[id];
    }
  }
  for (const auto& [label, cell] : by_group) table.columns.push_back(label);
  table.column_totals.assign(table.columns.size(), 0);
  for (const auto& id : table.markers) {
    auto& row = table.counts[id];
    row.assign(table.columns.size(), 0);
    for (std::size_t c = 0; c < table.columns.size(); ++c) {
      const auto& cell = by_group[table.columns[c]];
      if (const auto it = cell.find(id); it != cell.end()) row[c] = it->second;
      table.column_totals[c] += row[c];
    }
  }
  return table;
}

std::string to_tsv(const MarkerCountTable& table) {
  std::ostringstream os;
  os << "category\tmarker";
  for (const auto& c : table.columns) os << '\t' << c;
  os << "\ttotal\n";
  for (const auto& id : table.markers) {
    const auto* m = find_marker(id);
    os << (m ? to_string(m->category) : "unknown") << '\t' << id;
    std::size_t total = 0;
    for (const auto v : table.counts.at(id)) {
      os << '\t' << v;
      total += v;
    }
    os << '\t' << total << '\n';
  }
  os << "\ttotal";
  std::size_t grand = 0;
  for (const auto v : table.column_totals) {
    os << '\t' << v;
    grand += v;
  }
  os << '\t' << grand << '\n';
  return os.str();
}

}  // namespace epitrace::service
