#include "epitrace/epi_graph.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <set>
#include <tuple>

#include "epitrace/error.hpp"

namespace epitrace::graph {

using nlohmann::json;
using nlohmann::ordered_json;

std::string_view to_string(NodeType type) {
  switch (type) {
    case NodeType::H: return "H";
    case NodeType::T: return "T";
    case NodeType::E: return "E";
    case NodeType::J: return "J";
    case NodeType::C: return "C";
    case NodeType::F: return "F";
    case NodeType::N: return "N";
  }
  return "?";
}

std::string_view to_string(Relation relation) {
  switch (relation) {
    case Relation::kTests: return "tests";
    case Relation::kObserves: return "observes";
    case Relation::kInforms: return "informs";
    case Relation::kContradicts: return "contradicts";
    case Relation::kCompetesWith: return "competes_with";
    case Relation::kUpdatesTo: return "updates_to";
  }
  return "?";
}

std::optional<NodeType> parse_node_type(std::string_view text) {
  for (const auto t : kAllNodeTypes) {
    if (to_string(t) == text) return t;
  }
  return std::nullopt;
}

std::optional<Relation> parse_relation(std::string_view text) {
  for (const auto r : kAllRelations) {
    if (to_string(r) == text) return r;
  }
  return std::nullopt;
}

const EpiNode* EpistemicGraph::find_node(std::string_view node_id) const {
  const auto it = std::find_if(nodes.begin(), nodes.end(),
                               [&](const EpiNode& n) { return n.node_id == node_id; });
  return it == nodes.end() ? nullptr : &*it;
}

EpiNode make_node(std::string node_id, NodeType type, int time, std::string text,
                  std::vector<Support> support) {
  return EpiNode{std::move(node_id), type, std::string(to_string(type)), time, std::move(text),
                 std::move(support)};
}

EpiEdge make_edge(std::string src, std::string dst, Relation relation, int time,
                  std::vector<Support> support) {
  return EpiEdge{std::move(src), std::move(dst), relation, std::string(to_string(relation)), time,
                 std::move(support)};
}

bool allowed(Relation relation, NodeType src, NodeType dst) {
  using enum NodeType;
  switch (relation) {
    case Relation::kTests: return (src == H || src == J) && dst == T;
    case Relation::kObserves: return src == T && dst == E;
    case Relation::kUpdatesTo:
    case Relation::kCompetesWith: return src == H && dst == H;
    case Relation::kContradicts: return (src == E || src == J) && dst == H;
    case Relation::kInforms:
      return (src == E && (dst == H || dst == J || dst == C)) ||
             (src == J && (dst == C || dst == H || dst == J));
  }
  return false;
}

std::string_view to_string(WarningCategory category) {
  switch (category) {
    case WarningCategory::kNonVerbatimQuoteNode: return "non_verbatim_quote_node";
    case WarningCategory::kNonVerbatimQuoteEdge: return "non_verbatim_quote_edge";
    case WarningCategory::kDisallowedCombination: return "disallowed_combination";
    case WarningCategory::kExtraNodeAtObservationRemoved: return "extra_node_at_observation_removed";
    case WarningCategory::kNodeTypeCorrectedEOnly: return "node_type_corrected_e_only";
    case WarningCategory::kOtherStructural: return "other_structural";
    case WarningCategory::kSchemaViolation: return "schema_violation";
  }
  return "?";
}

std::optional<WarningCategory> parse_warning_category(std::string_view text) {
  for (const auto c : kAllWarningCategories) {
    if (to_string(c) == text) return c;
  }
  return std::nullopt;
}

void WarningLedger::add(WarningCategory category, std::string id, std::string detail) {
  entries.push_back(Warning{category, std::move(id), std::move(detail)});
}

void WarningLedger::append(const WarningLedger& other) {
  entries.insert(entries.end(), other.entries.begin(), other.entries.end());
}

std::size_t WarningLedger::count(WarningCategory category) const {
  return static_cast<std::size_t>(std::count_if(
      entries.begin(), entries.end(), [&](const Warning& w) { return w.category == category; }));
}

std::string edge_label(const EpiEdge& edge) {
  const std::string rel = edge.relation ? std::string(to_string(*edge.relation)) : edge.relation_label;
  return edge.src + "-" + rel + "->" + edge.dst;
}

namespace {

std::string normalize_line_endings(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] == '\r') {
      out.push_back('\n');
      if (i + 1 < text.size() && text[i + 1] == '\n') ++i;
    } else {
      out.push_back(text[i]);
    }
  }
  return out;
}

// Empty string when the quote is verbatim, otherwise the reason it is not.
std::string check_quote(const Support& s, const trace::Trace& trace) {
  if (s.msg_idx < 0 || s.msg_idx >= static_cast<int>(trace.messages.size())) {
    return "msg_idx " + std::to_string(s.msg_idx) + " is outside the trace";
  }
  if (s.quote.empty()) return "empty quote for msg_idx " + std::to_string(s.msg_idx);
  const auto haystack = normalize_line_endings(trace.messages[s.msg_idx].content);
  if (haystack.find(normalize_line_endings(s.quote)) == std::string::npos) {
    return "quote is not a verbatim substring of message " + std::to_string(s.msg_idx);
  }
  return {};
}

int earliest_support(const std::vector<Support>& support, int fallback) {
  if (support.empty()) return fallback;
  return std::min_element(support.begin(), support.end(),
                          [](const Support& a, const Support& b) { return a.msg_idx < b.msg_idx; })
      ->msg_idx;
}

bool anchored_on_observations(const EpiNode& node, const trace::Trace& trace) {
  if (node.support.empty()) return false;
  return std::all_of(node.support.begin(), node.support.end(), [&](const Support& s) {
    return s.msg_idx >= 0 && s.msg_idx < static_cast<int>(trace.messages.size()) &&
           trace.messages[s.msg_idx].role == trace::Role::kObservation;
  });
}

}  // namespace

ValidationResult validate_graph(const EpistemicGraph& input, const trace::Trace& trace,
                                const ValidationOptions& options) {
  if (input.trace_id != trace.trace_id) {
    throw StructuralError("graph for trace '" + input.trace_id + "' validated against trace '" +
                          trace.trace_id + "'");
  }
  ValidationResult result;
  auto& ledger = result.ledger;
  EpistemicGraph graph{input.trace_id, {}, {}};

  // Vocabulary and required-field checks.
  std::set<std::string, std::less<>> seen_ids;
  for (const auto& node : input.nodes) {
    if (!node.type) {
      ledger.add(WarningCategory::kSchemaViolation, node.node_id,
                 "unknown node type '" + node.type_label + "'; node removed");
      continue;
    }
    if (node.support.empty()) {
      ledger.add(WarningCategory::kSchemaViolation, node.node_id, "node has no support; node removed");
      continue;
    }
    if (!seen_ids.insert(node.node_id).second) {
      ledger.add(WarningCategory::kOtherStructural, node.node_id, "duplicate node_id; later node removed");
      continue;
    }
    graph.nodes.push_back(node);
  }
  std::vector<EpiEdge> candidate_edges;
  for (const auto& edge : input.edges) {
    if (!edge.relation) {
      ledger.add(WarningCategory::kSchemaViolation, edge_label(edge),
                 "unknown edge relation '" + edge.relation_label + "'; edge removed");
      continue;
    }
    if (edge.support.empty()) {
      ledger.add(WarningCategory::kSchemaViolation, edge_label(edge), "edge has no support; edge removed");
      continue;
    }
    candidate_edges.push_back(edge);
  }
  if (options.schema_violation_discard_threshold &&
      ledger.count(WarningCategory::kSchemaViolation) >= *options.schema_violation_discard_threshold) {
    result.graph = EpistemicGraph{input.trace_id, {}, {}};
    result.discarded = true;
    return result;
  }

  for (auto& node : graph.nodes) {
    const int earliest = earliest_support(node.support, node.time);
    if (node.time != earliest) {
      ledger.add(WarningCategory::kOtherStructural, node.node_id,
                 "time " + std::to_string(node.time) + " corrected to earliest support " +
                     std::to_string(earliest));
      node.time = earliest;
    }
  }

  // Observation messages carry exactly one node, and it is Evidence.
  std::map<int, std::vector<std::size_t>> by_observation;
  for (std::size_t i = 0; i < graph.nodes.size(); ++i) {
    if (anchored_on_observations(graph.nodes[i], trace)) by_observation[graph.nodes[i].time].push_back(i);
  }
  std::vector<bool> keep(graph.nodes.size(), true);
  for (const auto& [msg_idx, members] : by_observation) {
    const auto e_it = std::find_if(members.begin(), members.end(),
                                   [&](std::size_t i) { return graph.nodes[i].type == NodeType::E; });
    std::optional<std::size_t> survivor;
    if (e_it != members.end()) survivor = *e_it;
    for (const auto i : members) {
      auto& node = graph.nodes[i];
      if (survivor == i) continue;
      if (!survivor) {
        ledger.add(WarningCategory::kNodeTypeCorrectedEOnly, node.node_id,
                   "type " + std::string(to_string(*node.type)) + " on observation message " +
                       std::to_string(msg_idx) + " corrected to E");
        node.type = NodeType::E;
        node.type_label = "E";
        survivor = i;
        continue;
      }
      ledger.add(WarningCategory::kExtraNodeAtObservationRemoved, node.node_id,
                 "extra " + std::string(to_string(*node.type)) + " node on observation message " +
                     std::to_string(msg_idx) + " removed");
      keep[i] = false;
    }
  }

  // A message contributes at most one final-answer node.
  std::set<int> final_answer_messages;
  for (std::size_t i = 0; i < graph.nodes.size(); ++i) {
    const auto& node = graph.nodes[i];
    if (!keep[i] || node.type != NodeType::F) continue;
    if (!final_answer_messages.insert(node.time).second) {
      ledger.add(WarningCategory::kOtherStructural, node.node_id,
                 "second F node on message " + std::to_string(node.time) + " removed");
      keep[i] = false;
    }
  }

  std::vector<EpiNode> kept_nodes;
  for (std::size_t i = 0; i < graph.nodes.size(); ++i) {
    if (keep[i]) kept_nodes.push_back(std::move(graph.nodes[i]));
  }
  graph.nodes = std::move(kept_nodes);

  for (const auto& node : graph.nodes) {
    // Commitment pseudo-nodes may quote an explanatory gloss.
    if (node.type == NodeType::C) continue;
    for (const auto& s : node.support) {
      if (auto reason = check_quote(s, trace); !reason.empty()) {
        ledger.add(WarningCategory::kNonVerbatimQuoteNode, node.node_id, std::move(reason));
      }
    }
  }

  std::map<std::string, NodeType, std::less<>> type_of;
  for (const auto& node : graph.nodes) type_of.emplace(node.node_id, *node.type);
  std::set<std::tuple<std::string, std::string, Relation>> seen_edges;
  for (auto& edge : candidate_edges) {
    const auto label = edge_label(edge);
    if (edge.src == edge.dst) {
      ledger.add(WarningCategory::kOtherStructural, label, "self-loop removed");
      continue;
    }
    const auto src = type_of.find(edge.src);
    const auto dst = type_of.find(edge.dst);
    if (src == type_of.end() || dst == type_of.end()) {
      const auto& missing = src == type_of.end() ? edge.src : edge.dst;
      ledger.add(WarningCategory::kOtherStructural, label,
                 "endpoint '" + missing + "' does not exist; edge removed");
      continue;
    }
    if (!allowed(*edge.relation, src->second, dst->second)) {
      ledger.add(WarningCategory::kDisallowedCombination, label,
                 "(" + std::string(to_string(*edge.relation)) + ", " + std::string(to_string(src->second)) +
                     ", " + std::string(to_string(dst->second)) + ") is not permitted; edge removed");
      continue;
    }
    if (!seen_edges.emplace(edge.src, edge.dst, *edge.relation).second) {
      ledger.add(WarningCategory::kOtherStructural, label, "duplicate edge removed");
      continue;
    }
    const int earliest = earliest_support(edge.support, edge.time);
    if (edge.time != earliest) {
      ledger.add(WarningCategory::kOtherStructural, label,
                 "time " + std::to_string(edge.time) + " corrected to earliest support " +
                     std::to_string(earliest));
      edge.time = earliest;
    }
    for (const auto& s : edge.support) {
      if (auto reason = check_quote(s, trace); !reason.empty()) {
        ledger.add(WarningCategory::kNonVerbatimQuoteEdge, label, std::move(reason));
      }
    }
    graph.edges.push_back(std::move(edge));
  }

  if (options.strict && !ledger.empty()) {
    result.graph = EpistemicGraph{input.trace_id, {}, {}};
    result.discarded = true;
    return result;
  }
  result.graph = std::move(graph);
  return result;
}

std::string normalize_text(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (const char raw : text) {
    const auto ch = static_cast<unsigned char>(raw);
    if (std::isspace(ch)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::tolower(ch)));
  }
  return out;
}

namespace {

void merge_support(std::vector<Support>& into, const std::vector<Support>& from) {
  for (const auto& s : from) {
    if (std::find(into.begin(), into.end(), s) == into.end()) into.push_back(s);
  }
}

}  // namespace

std::vector<EpiEdge> merge_edges(const std::vector<std::vector<EpiEdge>>& windows) {
  std::vector<EpiEdge> out;
  std::map<std::tuple<std::string, std::string, std::string>, std::size_t> index;
  for (const auto& window : windows) {
    for (const auto& edge : window) {
      const std::string rel = edge.relation ? std::string(to_string(*edge.relation)) : edge.relation_label;
      const auto key = std::make_tuple(edge.src, edge.dst, rel);
      const auto it = index.find(key);
      if (it == index.end()) {
        index.emplace(key, out.size());
        out.push_back(edge);
        continue;
      }
      auto& existing = out[it->second];
      merge_support(existing.support, edge.support);
      existing.time = std::min(existing.time, edge.time);
    }
  }
  return out;
}

EpistemicGraph merge_window_annotations(const std::vector<EpistemicGraph>& fragments) {
  EpistemicGraph merged;
  if (fragments.empty()) return merged;
  merged.trace_id = fragments.front().trace_id;
  for (const auto& f : fragments) {
    if (f.trace_id != merged.trace_id) {
      throw StructuralError("cannot merge fragments of traces '" + merged.trace_id + "' and '" +
                            f.trace_id + "'");
    }
  }

  struct Entry {
    EpiNode node;
    std::size_t first_seen;
  };
  std::vector<Entry> entries;
  std::map<std::tuple<std::string, int, std::string>, std::size_t> by_key;
  // Per fragment: local node_id -> entry position.
  std::vector<std::map<std::string, std::size_t, std::less<>>> local(fragments.size());

  for (std::size_t f = 0; f < fragments.size(); ++f) {
    for (const auto& node : fragments[f].nodes) {
      const std::string type = node.type ? std::string(to_string(*node.type)) : node.type_label;
      const int earliest = earliest_support(node.support, node.time);
      const auto key = std::make_tuple(type, earliest, normalize_text(node.text));
      auto it = by_key.find(key);
      if (it == by_key.end()) {
        it = by_key.emplace(key, entries.size()).first;
        entries.push_back(Entry{node, entries.size()});
        entries.back().node.time = earliest;
      } else {
        merge_support(entries[it->second].node.support, node.support);
      }
      local[f].emplace(node.node_id, it->second);
    }
  }

  std::vector<std::size_t> order(entries.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return entries[a].node.time < entries[b].node.time;
  });
  std::vector<std::string> canonical(entries.size());
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    canonical[order[rank]] = "N" + std::to_string(rank + 1);
  }
  for (const auto i : order) {
    auto node = entries[i].node;
    node.node_id = canonical[i];
    merged.nodes.push_back(std::move(node));
  }

  std::vector<std::vector<EpiEdge>> remapped(fragments.size());
  for (std::size_t f = 0; f < fragments.size(); ++f) {
    auto resolve = [&](const std::string& id) {
      const auto it = local[f].find(id);
      return it == local[f].end() ? "?" + id : canonical[it->second];
    };
    for (auto edge : fragments[f].edges) {
      edge.src = resolve(edge.src);
      edge.dst = resolve(edge.dst);
      remapped[f].push_back(std::move(edge));
    }
  }
  merged.edges = merge_edges(remapped);
  return merged;
}

namespace {

std::vector<Support> support_from_json(const json& doc, const std::string& path) {
  std::vector<Support> out;
  if (doc.is_null()) return out;
  if (!doc.is_array()) throw ParseError(path, "expected an array");
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const auto& s = doc[i];
    const auto item = path + "[" + std::to_string(i) + "]";
    if (!s.is_object()) throw ParseError(item, "expected an object");
    const auto idx = s.find("msg_idx");
    if (idx == s.end() || !idx->is_number_integer()) throw ParseError(item + ".msg_idx", "expected an integer");
    const auto quote = s.find("quote");
    if (quote == s.end() || !quote->is_string()) throw ParseError(item + ".quote", "expected a string");
    out.push_back(Support{idx->get<int>(), quote->get<std::string>()});
  }
  return out;
}

ordered_json support_to_json(const std::vector<Support>& support) {
  auto out = ordered_json::array();
  for (const auto& s : support) out.push_back({{"msg_idx", s.msg_idx}, {"quote", s.quote}});
  return out;
}

std::string string_field(const json& doc, const char* key, const std::string& path) {
  const auto it = doc.find(key);
  if (it == doc.end() || !it->is_string()) throw ParseError(path + "." + key, "expected a string");
  return it->get<std::string>();
}

}  // namespace

std::vector<EpiNode> nodes_from_json(const json& nodes) {
  if (!nodes.is_array()) throw ParseError("nodes", "expected an array");
  std::vector<EpiNode> out;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const auto path = "nodes[" + std::to_string(i) + "]";
    const auto& n = nodes[i];
    if (!n.is_object()) throw ParseError(path, "expected an object");
    EpiNode node;
    node.node_id = string_field(n, "node_id", path);
    node.type_label = string_field(n, "type", path);
    node.type = parse_node_type(node.type_label);
    const auto time = n.find("time");
    if (time == n.end() || !time->is_number_integer()) throw ParseError(path + ".time", "expected an integer");
    node.time = time->get<int>();
    node.text = string_field(n, "text", path);
    node.support = support_from_json(n.value("support", json::array()), path + ".support");
    out.push_back(std::move(node));
  }
  return out;
}

std::vector<EpiEdge> edges_from_json(const json& edges) {
  if (!edges.is_array()) throw ParseError("edges", "expected an array");
  std::vector<EpiEdge> out;
  for (std::size_t i = 0; i < edges.size(); ++i) {
    const auto path = "edges[" + std::to_string(i) + "]";
    const auto& e = edges[i];
    if (!e.is_object()) throw ParseError(path, "expected an object");
    EpiEdge edge;
    edge.src = string_field(e, "src", path);
    edge.dst = string_field(e, "dst", path);
    edge.relation_label = string_field(e, "relation", path);
    edge.relation = parse_relation(edge.relation_label);
    const auto time = e.find("time");
    if (time == e.end() || !time->is_number_integer()) throw ParseError(path + ".time", "expected an integer");
    edge.time = time->get<int>();
    edge.support = support_from_json(e.value("support", json::array()), path + ".support");
    out.push_back(std::move(edge));
  }
  return out;
}

ordered_json node_to_json(const EpiNode& node) {
  ordered_json n;
  n["node_id"] = node.node_id;
  n["type"] = node.type ? std::string(to_string(*node.type)) : node.type_label;
  n["time"] = node.time;
  n["text"] = node.text;
  n["support"] = support_to_json(node.support);
  return n;
}

ordered_json edge_to_json(const EpiEdge& edge) {
  ordered_json e;
  e["src"] = edge.src;
  e["dst"] = edge.dst;
  e["relation"] = edge.relation ? std::string(to_string(*edge.relation)) : edge.relation_label;
  e["time"] = edge.time;
  e["support"] = support_to_json(edge.support);
  return e;
}

ordered_json to_json(const EpistemicGraph& graph) {
  ordered_json doc;
  doc["trace_id"] = graph.trace_id;
  auto& nodes = doc["nodes"] = ordered_json::array();
  for (const auto& n : graph.nodes) nodes.push_back(node_to_json(n));
  auto& edges = doc["edges"] = ordered_json::array();
  for (const auto& e : graph.edges) edges.push_back(edge_to_json(e));
  return doc;
}

EpistemicGraph graph_from_json(const json& doc) {
  if (!doc.is_object()) throw ParseError("<root>", "expected an object");
  EpistemicGraph graph;
  if (const auto it = doc.find("trace_id"); it != doc.end()) {
    if (!it->is_string()) throw ParseError("trace_id", "expected a string");
    graph.trace_id = it->get<std::string>();
  }
  if (const auto it = doc.find("nodes"); it != doc.end()) graph.nodes = nodes_from_json(*it);
  if (const auto it = doc.find("edges"); it != doc.end()) graph.edges = edges_from_json(*it);
  return graph;
}

ordered_json to_json(const WarningLedger& ledger) {
  auto entries = ordered_json::array();
  for (const auto& w : ledger.entries) {
    entries.push_back({{"category", to_string(w.category)},
                       {"node_or_edge_id", w.node_or_edge_id},
                       {"detail", w.detail}});
  }
  return ordered_json{{"entries", std::move(entries)}};
}

WarningLedger ledger_from_json(const json& doc) {
  WarningLedger ledger;
  const auto it = doc.find("entries");
  if (it == doc.end() || !it->is_array()) throw ParseError("entries", "expected an array");
  for (std::size_t i = 0; i < it->size(); ++i) {
    const auto& e = (*it)[i];
    const auto path = "entries[" + std::to_string(i) + "]";
    const auto category = parse_warning_category(string_field(e, "category", path));
    if (!category) throw ParseError(path + ".category", "unknown warning category");
    ledger.add(*category, string_field(e, "node_or_edge_id", path), string_field(e, "detail", path));
  }
  return ledger;
}

}  // namespace epitrace::graph
