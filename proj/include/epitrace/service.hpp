#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "epitrace/epi_graph.hpp"
#include "epitrace/error.hpp"
#include "epitrace/motif_engine.hpp"
#include "epitrace/trace.hpp"

namespace epitrace::service {

enum class MarkerCategory { kPositive, kNeutral, kNegative };

std::string_view to_string(MarkerCategory category);

struct Marker {
  std::string_view id;
  MarkerCategory category;
  std::string_view definition;
};

// Behavioral markers for manual trace review, in catalogue order.
std::span<const Marker> marker_taxonomy();
const Marker* find_marker(std::string_view id);
nlohmann::ordered_json taxonomy_json();

struct NodeMarkers {
  int msg_idx = 0;
  std::vector<std::string> markers;
  std::optional<std::string> note;

  bool operator==(const NodeMarkers&) const = default;
};

struct MarkerAnnotation {
  std::string trace_id;
  std::string annotator_id;
  int revision = 0;  // assigned by the store
  bool submitted = false;
  std::optional<std::string> trace_note;
  std::vector<NodeMarkers> nodes;  // sorted by msg_idx when stored

  bool operator==(const MarkerAnnotation&) const = default;
};

nlohmann::ordered_json to_json(const MarkerAnnotation& annotation);
MarkerAnnotation annotation_from_json(const nlohmann::json& doc);
// Canonical stored form; the store keeps these bytes verbatim.
std::string serialize(const MarkerAnnotation& annotation);

// Indices of marker-annotatable messages without any marker.
// Throws StructuralError when the annotation belongs to another trace.
std::vector<int> completeness_gaps(const MarkerAnnotation& annotation, const trace::Trace& trace);
bool check_submission_completeness(const MarkerAnnotation& annotation, const trace::Trace& trace);

// Unknown markers, duplicate or non-annotatable message indices, and trace
// mismatches raise ValidationError.
void validate_annotation(const MarkerAnnotation& annotation, const trace::Trace& trace);

// Submission was requested for an annotation with unmarked messages.
class IncompleteError : public ValidationError {
 public:
  explicit IncompleteError(std::vector<int> gaps);
  const std::vector<int>& gaps() const noexcept { return gaps_; }

 private:
  std::vector<int> gaps_;
};

// A write named a revision that is no longer the latest.
class ConflictError : public Error {
 public:
  ConflictError(int expected, int actual);
  int actual() const noexcept { return actual_; }

 private:
  int actual_;
};

class NotFoundError : public Error {
 public:
  using Error::Error;
};

struct TraceFilter {
  std::map<trace::GroupField, std::string> equals;
};

// Directory-backed document store:
//   traces/<id>.json, graphs/<id>.json, graphs/<id>.ledger.json,
//   motifs/<id>.json, annotations/<trace>/<annotator>/rev-NNNNNN.json,
//   index.json (trace metadata).
// Every write goes to a temporary file that is renamed into place.
class Store {
 public:
  explicit Store(std::filesystem::path root);

  const std::filesystem::path& root() const noexcept { return root_; }

  void put_trace(const trace::Trace& trace);
  std::optional<trace::Trace> get_trace(std::string_view trace_id) const;
  std::vector<trace::Trace> list_traces(const TraceFilter& filter = {}) const;
  trace::TraceCorpus corpus() const;
  // Metadata of the traces matching `filter`, as stored in the index.
  nlohmann::ordered_json list_metadata(const TraceFilter& filter = {}) const;

  void put_graph(const graph::EpistemicGraph& graph, const graph::WarningLedger& ledger);
  std::optional<nlohmann::json> get_graph(std::string_view trace_id) const;
  std::optional<nlohmann::json> get_ledger(std::string_view trace_id) const;

  void put_motifs(std::string_view trace_id, const std::vector<motif::MotifHit>& hits);
  std::optional<nlohmann::json> get_motifs(std::string_view trace_id) const;
  std::map<std::string, std::vector<motif::MotifHit>> all_motifs() const;

  // Validates against the stored trace and appends a new revision. When
  // `expected_revision` is given and differs from the latest, throws
  // ConflictError; otherwise the last writer wins. Submitted annotations must
  // be complete (IncompleteError). Returns the new revision number.
  int store_annotation(MarkerAnnotation annotation, std::optional<int> expected_revision = std::nullopt);
  // Marks the latest revision as submitted, storing a new revision.
  int submit_annotation(std::string_view trace_id, std::string_view annotator_id);

  // Stored bytes of the latest (or a given) revision.
  std::optional<std::string> annotation_document(std::string_view trace_id, std::string_view annotator_id,
                                                 std::optional<int> revision = std::nullopt) const;
  std::optional<MarkerAnnotation> latest_annotation(std::string_view trace_id, std::string_view annotator_id) const;
  std::vector<int> annotation_revisions(std::string_view trace_id, std::string_view annotator_id) const;
  // Latest revision of every (trace, annotator) pair.
  std::vector<MarkerAnnotation> latest_annotations() const;

 private:
  std::filesystem::path trace_path(std::string_view id) const;
  std::filesystem::path annotation_dir(std::string_view trace_id, std::string_view annotator_id) const;
  std::mutex& key_lock(const std::string& key);
  void update_index(const trace::Trace& trace);
  nlohmann::json read_index() const;

  std::filesystem::path root_;
  mutable std::mutex index_mutex_;
  std::mutex locks_mutex_;
  std::map<std::string, std::unique_ptr<std::mutex>> locks_;
};

// Writes `content` to `path` atomically (temporary file, then rename).
void atomic_write(const std::filesystem::path& path, std::string_view content);

// File-name form of an id: bytes outside [A-Za-z0-9_-] become %XX.
std::string encode_id(std::string_view id);

struct MarkerCountTable {
  std::vector<std::string> columns;  // group labels
  std::vector<std::string> markers;  // taxonomy order
  std::map<std::string, std::vector<std::size_t>> counts;  // marker -> per column
  std::vector<std::size_t> column_totals;
};

// Marker occurrences per group. A marker listed twice on one message counts
// once. Annotations whose trace is not in `corpus` are skipped.
MarkerCountTable marker_counts(std::span<const MarkerAnnotation> annotations, const trace::TraceCorpus& corpus,
                               std::span<const trace::GroupField> group_by);
std::string to_tsv(const MarkerCountTable& table);

}  // namespace epitrace::service
