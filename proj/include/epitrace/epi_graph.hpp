#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "epitrace/trace.hpp"

namespace epitrace::graph {

enum class NodeType { H, T, E, J, C, F, N };
enum class Relation { kTests, kObserves, kInforms, kContradicts, kCompetesWith, kUpdatesTo };

inline constexpr std::array kAllNodeTypes = {NodeType::H, NodeType::T, NodeType::E, NodeType::J,
                                             NodeType::C, NodeType::F, NodeType::N};
inline constexpr std::array kAllRelations = {Relation::kTests,       Relation::kObserves,
                                             Relation::kInforms,     Relation::kContradicts,
                                             Relation::kCompetesWith, Relation::kUpdatesTo};

std::string_view to_string(NodeType type);
std::string_view to_string(Relation relation);
std::optional<NodeType> parse_node_type(std::string_view text);
std::optional<Relation> parse_relation(std::string_view text);

struct Support {
  int msg_idx = 0;
  std::string quote;

  bool operator==(const Support&) const = default;
};

struct EpiNode {
  std::string node_id;
  // Unset when the annotator emitted a label outside the vocabulary; the raw
  // label is kept in `type_label` so validation can report it.
  std::optional<NodeType> type;
  std::string type_label;
  int time = 0;
  std::string text;
  std::vector<Support> support;

  bool operator==(const EpiNode&) const = default;
};

struct EpiEdge {
  std::string src;
  std::string dst;
  std::optional<Relation> relation;
  std::string relation_label;
  int time = 0;
  std::vector<Support> support;

  bool operator==(const EpiEdge&) const = default;
};

struct EpistemicGraph {
  std::string trace_id;
  std::vector<EpiNode> nodes;
  std::vector<EpiEdge> edges;

  const EpiNode* find_node(std::string_view node_id) const;
  bool operator==(const EpistemicGraph&) const = default;
};

EpiNode make_node(std::string node_id, NodeType type, int time, std::string text,
                  std::vector<Support> support);
EpiEdge make_edge(std::string src, std::string dst, Relation relation, int time,
                  std::vector<Support> support);

// The thirteen (relation, source type, destination type) triples an edge may take.
bool allowed(Relation relation, NodeType src, NodeType dst);

// Failure modes of the quality-control ledger.
enum class WarningCategory {
  kNonVerbatimQuoteNode,
  kNonVerbatimQuoteEdge,
  kDisallowedCombination,
  kExtraNodeAtObservationRemoved,
  kNodeTypeCorrectedEOnly,
  kOtherStructural,
  kSchemaViolation,
};

inline constexpr std::array kAllWarningCategories = {
    WarningCategory::kNonVerbatimQuoteNode,          WarningCategory::kNonVerbatimQuoteEdge,
    WarningCategory::kDisallowedCombination,         WarningCategory::kExtraNodeAtObservationRemoved,
    WarningCategory::kNodeTypeCorrectedEOnly,        WarningCategory::kOtherStructural,
    WarningCategory::kSchemaViolation,
};

std::string_view to_string(WarningCategory category);
std::optional<WarningCategory> parse_warning_category(std::string_view text);

struct Warning {
  WarningCategory category;
  std::string node_or_edge_id;
  std::string detail;

  bool operator==(const Warning&) const = default;
};

struct WarningLedger {
  std::vector<Warning> entries;

  void add(WarningCategory category, std::string id, std::string detail);
  void append(const WarningLedger& other);
  std::size_t count(WarningCategory category) const;
  bool empty() const noexcept { return entries.empty(); }
  bool operator==(const WarningLedger&) const = default;
};

// Edge identifier used in ledger entries: "src-relation->dst".
std::string edge_label(const EpiEdge& edge);

struct ValidationOptions {
  // Discard the whole graph when any check fails instead of repairing it.
  bool strict = false;
  // Discard the whole graph once this many schema violations are logged.
  std::optional<std::size_t> schema_violation_discard_threshold;
};

struct ValidationResult {
  EpistemicGraph graph;
  WarningLedger ledger;
  bool discarded = false;
};

// Checks quotes, endpoints, the edge whitelist and the observation E-only
// rule. Repairs what it can and records every intervention in the ledger.
// Throws StructuralError when the graph belongs to a different trace.
ValidationResult validate_graph(const EpistemicGraph& graph, const trace::Trace& trace,
                                const ValidationOptions& options = {});

// Case-folded, whitespace-collapsed text used for duplicate detection.
std::string normalize_text(std::string_view text);

// Unifies window fragments into one graph with canonical node ids N1, N2, ...
// in time order. Edge endpoints resolve against their own fragment's nodes;
// endpoints that do not resolve are kept verbatim behind a '?' prefix so that
// validation reports them as missing.
EpistemicGraph merge_window_annotations(const std::vector<EpistemicGraph>& fragments);

// Deduplicates edges by (src, dst, relation), keeping first-seen order and
// folding the support of later duplicates into the first.
std::vector<EpiEdge> merge_edges(const std::vector<std::vector<EpiEdge>>& windows);

// Graph document codec. The node and edge arrays follow the annotator output
// schema; "trace_id" is added at the top level when persisting.
nlohmann::ordered_json to_json(const EpistemicGraph& graph);
EpistemicGraph graph_from_json(const nlohmann::json& doc);
std::vector<EpiNode> nodes_from_json(const nlohmann::json& nodes);
std::vector<EpiEdge> edges_from_json(const nlohmann::json& edges);
nlohmann::ordered_json node_to_json(const EpiNode& node);
nlohmann::ordered_json edge_to_json(const EpiEdge& edge);

nlohmann::ordered_json to_json(const WarningLedger& ledger);
WarningLedger ledger_from_json(const nlohmann::json& doc);

}  // namespace epitrace::graph
