#include "epitrace/motif_engine.hpp"

#include <algorithm>
#include <iomanip>
#include <limits>
#include <set>
#include <sstream>

#include "epitrace/error.hpp"

namespace epitrace::motif {

using graph::EpistemicGraph;
using graph::NodeType;
using graph::Relation;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr std::array<std::string_view, 2> kRolesEH = {"E", "H"};
constexpr std::array<std::string_view, 2> kRolesH1H2 = {"H1", "H2"};
constexpr std::array<std::string_view, 2> kRolesT1H = {"T1", "H"};
constexpr std::array<std::string_view, 1> kRolesH = {"H"};
constexpr std::array<std::string_view, 2> kRolesHJ = {"H", "J"};
constexpr std::array<std::string_view, 2> kRolesJT = {"J", "T"};
constexpr std::array<std::string_view, 1> kRolesC = {"C"};
constexpr std::array<std::string_view, 2> kRolesXH = {"X", "H"};
constexpr std::array<std::string_view, 2> kRolesCH = {"C", "H"};
constexpr std::array<std::string_view, 1> kRolesE = {"E"};
constexpr std::array<std::string_view, 1> kRolesJ = {"J"};
constexpr std::array<std::string_view, 1> kRolesT = {"T"};
constexpr std::array<std::string_view, 0> kRolesNone = {};
constexpr std::array<std::string_view, 1> kRolesH2 = {"H2"};

using F = Family;
using P = Polarity;

const std::array<MotifInfo, kMotifCount> kMotifs = {{
    {MotifId::kEvidenceLedHypothesisGeneration, "evidence_led_hypothesis_generation",
     "Evidence-led hypothesis generation", F::kHypothesisHandling, P::kProductive, kRolesEH},
    {MotifId::kHypothesisReranking, "hypothesis_reranking", "Hypothesis reranking", F::kHypothesisHandling,
     P::kProductive, kRolesH1H2},
    {MotifId::kRefutationDrivenBeliefRevision, "refutation_driven_belief_revision",
     "Refutation-driven belief revision", F::kHypothesisHandling, P::kProductive, kRolesH1H2},
    {MotifId::kExploreThenTestTransition, "explore_then_test_transition", "Explore-then-test transition",
     F::kHypothesisHandling, P::kProductive, kRolesT1H},
    {MotifId::kConvergentMultiTestEvidence, "convergent_multi_test_evidence", "Convergent multi-test evidence",
     F::kEvidenceHandling, P::kProductive, kRolesH},
    {MotifId::kFixedHypothesisTestTuning, "fixed_hypothesis_test_tuning", "Fixed hypothesis test tuning",
     F::kInquiryControl, P::kProductive, kRolesHJ},
    {MotifId::kEvidenceGuidedTestRedesign, "evidence_guided_test_redesign", "Evidence-guided test redesign",
     F::kInquiryControl, P::kProductive, kRolesJT},
    {MotifId::kUntestedClaim, "untested_claim", "Untested claim", F::kHypothesisHandling, P::kBreakdown, kRolesH},
    {MotifId::kOneSidedConfirmation, "one_sided_confirmation", "One-sided confirmation", F::kHypothesisHandling,
     P::kBreakdown, kRolesC},
    {MotifId::kContradictionWithoutRepair, "contradiction_without_repair", "Contradiction without repair",
     F::kHypothesisHandling, P::kBreakdown, kRolesXH},
    {MotifId::kPrematureCommitment, "premature_commitment", "Premature commitment", F::kHypothesisHandling,
     P::kBreakdown, kRolesCH},
    {MotifId::kEvidenceNonUptake, "evidence_non_uptake", "Evidence non-uptake", F::kEvidenceHandling,
     P::kBreakdown, kRolesE},
    {MotifId::kDisconnectedEvidence, "disconnected_evidence", "Disconnected evidence", F::kEvidenceHandling,
     P::kBreakdown, kRolesE},
    {MotifId::kUnsupportedJudgment, "unsupported_judgment", "Unsupported judgment", F::kEvidenceHandling,
     P::kBreakdown, kRolesJ},
    {MotifId::kUninformativeTest, "uninformative_test", "Uninformative test", F::kEvidenceHandling, P::kBreakdown,
     kRolesT},
    {MotifId::kFixedBeliefTrace, "fixed_belief_trace", "Fixed belief trace", F::kInquiryControl, P::kBreakdown,
     kRolesNone},
    {MotifId::kPrecommittedTestPlan, "precommitted_test_plan", "Precommitted test plan", F::kInquiryControl,
     P::kBreakdown, kRolesC},
    {MotifId::kStalledRevision, "stalled_revision", "Stalled revision", F::kInquiryControl, P::kBreakdown,
     kRolesH2},
}};

// Index over the nodes and the edges whose endpoints both exist.
class Index {
 public:
  explicit Index(const EpistemicGraph& g) : g_(g) {
    for (std::size_t i = 0; i < g.nodes.size(); ++i) ids_.emplace(g.nodes[i].node_id, i);
    const auto n = g.nodes.size();
    out_.resize(n);
    in_.resize(n);
    for (const auto& e : g.edges) {
      if (!e.relation) continue;
      const auto s = ids_.find(e.src);
      const auto d = ids_.find(e.dst);
      if (s == ids_.end() || d == ids_.end()) continue;
      if (!edges_.insert({s->second, d->second, *e.relation}).second) continue;
      out_[s->second].push_back({d->second, *e.relation});
      in_[d->second].push_back({s->second, *e.relation});
    }
  }

  std::size_t size() const { return g_.nodes.size(); }
  bool is(std::size_t i, NodeType t) const { return g_.nodes[i].type == t; }
  int time(std::size_t i) const { return g_.nodes[i].time; }
  const std::string& id(std::size_t i) const { return g_.nodes[i].node_id; }
  std::optional<std::size_t> find(std::string_view id) const {
    const auto it = ids_.find(std::string(id));
    if (it == ids_.end()) return std::nullopt;
    return it->second;
  }

  std::vector<std::size_t> of_type(NodeType t) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < size(); ++i) {
      if (is(i, t)) out.push_back(i);
    }
    return out;
  }

  bool edge(std::size_t s, std::size_t d, Relation r) const { return edges_.contains({s, d, r}); }

  // Targets of `r` edges out of `s`, restricted to nodes of type `t` when given.
  std::vector<std::size_t> out(std::size_t s, Relation r, std::optional<NodeType> t = std::nullopt) const {
    std::vector<std::size_t> v;
    for (const auto& [d, rel] : out_[s]) {
      if (rel == r && (!t || is(d, *t))) v.push_back(d);
    }
    return v;
  }
  std::vector<std::size_t> in(std::size_t d, Relation r, std::optional<NodeType> t = std::nullopt) const {
    std::vector<std::size_t> v;
    for (const auto& [s, rel] : in_[d]) {
      if (rel == r && (!t || is(s, *t))) v.push_back(s);
    }
    return v;
  }
  std::size_t out_degree(std::size_t s) const { return out_[s].size(); }
  std::size_t in_degree(std::size_t d) const { return in_[d].size(); }
  bool any_out(std::size_t s, Relation r) const {
    return std::any_of(out_[s].begin(), out_[s].end(), [r](const auto& p) { return p.second == r; });
  }
  bool any_in(std::size_t d, Relation r) const {
    return std::any_of(in_[d].begin(), in_[d].end(), [r](const auto& p) { return p.second == r; });
  }
  const std::vector<std::pair<std::size_t, Relation>>& in_edges(std::size_t d) const { return in_[d]; }
  const std::set<std::tuple<std::size_t, std::size_t, Relation>>& edges() const { return edges_; }

 private:
  const EpistemicGraph& g_;
  std::map<std::string, std::size_t> ids_;
  std::vector<std::vector<std::pair<std::size_t, Relation>>> out_;
  std::vector<std::vector<std::pair<std::size_t, Relation>>> in_;
  std::set<std::tuple<std::size_t, std::size_t, Relation>> edges_;
};

class Detector {
 public:
  explicit Detector(const EpistemicGraph& g) : x_(g) {}

  std::vector<MotifHit> run(MotifId m) {
    hits_.clear();
    switch (m) {
      case MotifId::kEvidenceLedHypothesisGeneration: evidence_led(); break;
      case MotifId::kHypothesisReranking: reranking(); break;
      case MotifId::kRefutationDrivenBeliefRevision: refutation(); break;
      case MotifId::kExploreThenTestTransition: explore_then_test(); break;
      case MotifId::kConvergentMultiTestEvidence: convergent(); break;
      case MotifId::kFixedHypothesisTestTuning: test_tuning(); break;
      case MotifId::kEvidenceGuidedTestRedesign: test_redesign(); break;
      case MotifId::kUntestedClaim: untested_claim(); break;
      case MotifId::kOneSidedConfirmation: one_sided(); break;
      case MotifId::kContradictionWithoutRepair: contradiction(); break;
      case MotifId::kPrematureCommitment: premature(); break;
      case MotifId::kEvidenceNonUptake: non_uptake(); break;
      case MotifId::kDisconnectedEvidence: disconnected(); break;
      case MotifId::kUnsupportedJudgment: unsupported(); break;
      case MotifId::kUninformativeTest: uninformative(); break;
      case MotifId::kFixedBeliefTrace: fixed_belief(); break;
      case MotifId::kPrecommittedTestPlan: precommitted(); break;
      case MotifId::kStalledRevision: stalled(); break;
    }
    std::vector<MotifHit> out(hits_.begin(), hits_.end());
    for (auto& h : out) h.motif = m;
    return out;
  }

  std::vector<std::size_t> associated(std::size_t c) const {
    std::set<std::size_t> hs;
    for (const auto via : {NodeType::J, NodeType::E}) {
      for (const auto w : x_.in(c, Relation::kInforms, via)) {
        for (const auto h : x_.out(w, Relation::kInforms, NodeType::H)) hs.insert(h);
      }
    }
    if (!hs.empty()) return {hs.begin(), hs.end()};
    std::optional<int> latest;
    for (const auto h : x_.of_type(NodeType::H)) {
      if (x_.time(h) < x_.time(c) && (!latest || x_.time(h) > *latest)) latest = x_.time(h);
    }
    std::vector<std::size_t> out;
    if (!latest) return out;
    for (const auto h : x_.of_type(NodeType::H)) {
      if (x_.time(h) == *latest) out.push_back(h);
    }
    return out;
  }

 private:
  void hit(std::initializer_list<std::pair<std::string_view, std::size_t>> roles) {
    MotifHit h{MotifId::kUntestedClaim, {}};
    for (const auto& [role, node] : roles) h.bindings.emplace(std::string(role), x_.id(node));
    hits_.insert(std::move(h));
  }

  bool tested(std::size_t h) const { return !x_.out(h, Relation::kTests, NodeType::T).empty(); }
  bool has_evidence(std::size_t t) const { return !x_.out(t, Relation::kObserves, NodeType::E).empty(); }

  void evidence_led() {
    for (const auto h : x_.of_type(NodeType::H)) {
      if (!tested(h)) continue;
      std::set<std::size_t> sources;
      for (const auto e : x_.in(h, Relation::kInforms, NodeType::E)) sources.insert(e);
      for (const auto j : x_.in(h, Relation::kInforms, NodeType::J)) {
        for (const auto e : x_.in(j, Relation::kInforms, NodeType::E)) sources.insert(e);
      }
      for (const auto e : sources) {
        if (x_.time(e) < x_.time(h)) hit({{"E", e}, {"H", h}});
      }
    }
  }

  void reranking() {
    for (const auto h1 : x_.of_type(NodeType::H)) {
      if (!tested(h1)) continue;
      for (const auto h2 : x_.out(h1, Relation::kCompetesWith, NodeType::H)) {
        if (tested(h2)) hit({{"H1", h1}, {"H2", h2}});
      }
    }
  }

  void refutation() {
    for (const auto h1 : x_.of_type(NodeType::H)) {
      const auto targets = x_.out(h1, Relation::kUpdatesTo, NodeType::H);
      if (targets.empty()) continue;
      std::optional<int> earliest;
      for (const auto t : x_.out(h1, Relation::kTests, NodeType::T)) {
        for (const auto e : x_.out(t, Relation::kObserves, NodeType::E)) {
          if (!earliest || x_.time(e) < *earliest) earliest = x_.time(e);
        }
      }
      if (!earliest) continue;
      for (const auto h2 : targets) {
        if (*earliest <= x_.time(h2)) hit({{"H1", h1}, {"H2", h2}});
      }
    }
  }

  void explore_then_test() {
    std::vector<std::size_t> tested_h;
    for (const auto h : x_.of_type(NodeType::H)) {
      if (tested(h)) tested_h.push_back(h);
    }
    for (const auto t : x_.of_type(NodeType::T)) {
      if (!has_evidence(t)) continue;
      const auto& ins = x_.in_edges(t);
      const bool directed = std::any_of(ins.begin(), ins.end(), [&](const auto& p) {
        return x_.is(p.first, NodeType::H) || x_.is(p.first, NodeType::J);
      });
      if (directed) continue;
      for (const auto h : tested_h) {
        if (x_.time(t) < x_.time(h)) hit({{"T1", t}, {"H", h}});
      }
    }
  }

  void convergent() {
    for (const auto h : x_.of_type(NodeType::H)) {
      std::size_t productive_tests = 0;
      for (const auto t : x_.out(h, Relation::kTests, NodeType::T)) {
        if (has_evidence(t)) ++productive_tests;
      }
      if (productive_tests >= 2) hit({{"H", h}});
    }
  }

  void test_tuning() {
    for (const auto h : x_.of_type(NodeType::H)) {
      if (!x_.out(h, Relation::kUpdatesTo).empty()) continue;
      for (const auto t : x_.out(h, Relation::kTests, NodeType::T)) {
        for (const auto e : x_.out(t, Relation::kObserves, NodeType::E)) {
          for (const auto j : x_.out(e, Relation::kInforms, NodeType::J)) {
            const auto next = x_.out(j, Relation::kTests, NodeType::T);
            if (std::any_of(next.begin(), next.end(), [t](std::size_t t2) { return t2 != t; })) {
              hit({{"H", h}, {"J", j}});
            }
          }
        }
      }
    }
  }

  void test_redesign() {
    for (const auto j : x_.of_type(NodeType::J)) {
      for (const auto t : x_.out(j, Relation::kTests, NodeType::T)) {
        if (has_evidence(t)) hit({{"J", j}, {"T", t}});
      }
    }
  }

  void untested_claim() {
    for (const auto h : x_.of_type(NodeType::H)) {
      if (!x_.any_out(h, Relation::kTests)) hit({{"H", h}});
    }
  }

  void one_sided() {
    for (const auto c : x_.of_type(NodeType::C)) {
      const auto hs = associated(c);
      if (hs.empty()) continue;
      const bool confirmed_only = std::all_of(hs.begin(), hs.end(), [&](std::size_t h) {
        return x_.any_in(h, Relation::kInforms) && !x_.any_in(h, Relation::kContradicts);
      });
      if (confirmed_only) hit({{"C", c}});
    }
  }

  void contradiction() {
    for (const auto h : x_.of_type(NodeType::H)) {
      if (x_.any_out(h, Relation::kUpdatesTo) || x_.any_out(h, Relation::kCompetesWith) ||
          x_.any_in(h, Relation::kCompetesWith)) {
        continue;
      }
      for (const auto via : {NodeType::E, NodeType::J}) {
        for (const auto src : x_.in(h, Relation::kContradicts, via)) hit({{"X", src}, {"H", h}});
      }
    }
  }

  void premature() {
    for (const auto c : x_.of_type(NodeType::C)) {
      for (const auto h : associated(c)) {
        if (!x_.any_out(h, Relation::kTests)) hit({{"C", c}, {"H", h}});
      }
    }
  }

  void non_uptake() {
    for (const auto e : x_.of_type(NodeType::E)) {
      if (x_.in_degree(e) > 0 && x_.out_degree(e) == 0) hit({{"E", e}});
    }
  }

  void disconnected() {
    for (const auto e : x_.of_type(NodeType::E)) {
      if (x_.in_degree(e) == 0 && x_.out_degree(e) == 0) hit({{"E", e}});
    }
  }

  void unsupported() {
    for (const auto j : x_.of_type(NodeType::J)) {
      if (x_.in(j, Relation::kInforms, NodeType::E).empty()) hit({{"J", j}});
    }
  }

  void uninformative() {
    for (const auto t : x_.of_type(NodeType::T)) {
      if (!x_.any_out(t, Relation::kObserves)) hit({{"T", t}});
    }
  }

  void fixed_belief() {
    if (x_.of_type(NodeType::H).empty()) return;
    for (const auto& [s, d, r] : x_.edges()) {
      if (r == Relation::kUpdatesTo) return;
    }
    hits_.insert(MotifHit{MotifId::kUntestedClaim, {}});
  }

  void precommitted() {
    const auto evidence = x_.of_type(NodeType::E);
    if (evidence.empty()) return;
    int first = std::numeric_limits<int>::max();
    for (const auto e : evidence) first = std::min(first, x_.time(e));
    for (const auto c : x_.of_type(NodeType::C)) {
      if (x_.time(c) < first) hit({{"C", c}});
    }
  }

  void stalled() {
    for (const auto h : x_.of_type(NodeType::H)) {
      if (!x_.any_in(h, Relation::kUpdatesTo)) continue;
      if (!x_.any_out(h, Relation::kTests) && !x_.any_out(h, Relation::kUpdatesTo)) hit({{"H2", h}});
    }
  }

  Index x_;
  std::set<MotifHit> hits_;
};

std::string fraction_text(double v, int precision) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

}  // namespace

const std::array<MotifInfo, kMotifCount>& all_motifs() { return kMotifs; }

const MotifInfo& info(MotifId id) { return kMotifs[static_cast<std::size_t>(id)]; }

std::string_view to_string(MotifId id) { return info(id).name; }

std::optional<MotifId> parse_motif(std::string_view name) {
  for (const auto& m : kMotifs) {
    if (m.name == name) return m.id;
  }
  return std::nullopt;
}

std::string_view to_string(Family family) {
  switch (family) {
    case Family::kHypothesisHandling: return "hypothesis_handling";
    case Family::kEvidenceHandling: return "evidence_handling";
    case Family::kInquiryControl: return "inquiry_control";
  }
  return "unknown";
}

std::string_view to_string(Polarity polarity) {
  return polarity == Polarity::kProductive ? "productive" : "breakdown";
}

std::vector<MotifId> table_order() {
  std::vector<MotifId> ids;
  for (const auto& m : kMotifs) ids.push_back(m.id);
  std::stable_sort(ids.begin(), ids.end(), [](MotifId a, MotifId b) {
    return std::pair(info(a).family, info(a).polarity) < std::pair(info(b).family, info(b).polarity);
  });
  return ids;
}

std::vector<MotifHit> detect(const EpistemicGraph& graph) {
  Detector d(graph);
  std::vector<MotifHit> out;
  for (const auto& m : kMotifs) {
    auto hits = d.run(m.id);
    out.insert(out.end(), hits.begin(), hits.end());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<MotifHit> detect_one(const EpistemicGraph& graph, MotifId motif) { return Detector(graph).run(motif); }

std::vector<std::string> committed_hypotheses(const EpistemicGraph& graph, std::string_view commitment_id) {
  Index x(graph);
  const auto c = x.find(commitment_id);
  if (!c || !x.is(*c, NodeType::C)) return {};
  std::vector<std::string> ids;
  for (const auto h : Detector(graph).associated(*c)) ids.push_back(graph.nodes[h].node_id);
  return ids;
}

PrevalenceReport prevalence(const std::map<std::string, std::vector<MotifHit>>& results,
                            const trace::TraceCorpus& corpus, std::span<const trace::GroupField> group_by,
                            const PrevalenceOptions& options) {
  PrevalenceReport report;
  report.group_by.assign(group_by.begin(), group_by.end());
  report.environment_averaged =
      options.average_over_environments &&
      std::find(group_by.begin(), group_by.end(), trace::GroupField::kEnvironment) == group_by.end();

  struct Cell {
    std::size_t traces = 0;
    std::map<MotifId, std::size_t> with_hit;
  };
  struct Accum {
    std::map<std::string, std::string> keys;
    std::map<std::string, Cell> by_env;  // single "" cell unless averaging
  };
  std::map<std::string, Accum> groups;

  for (const auto& [trace_id, hits] : results) {
    const auto* t = corpus.find(trace_id);
    if (!t) throw ValidationError("motif results reference unknown trace '" + trace_id + "'");
    const auto label = trace::group_label(*t, group_by);
    auto& acc = groups[label];
    if (acc.keys.empty()) {
      for (const auto f : group_by) acc.keys.emplace(std::string(trace::to_string(f)), trace::field_value(*t, f));
    }
    auto& cell = acc.by_env[report.environment_averaged ? t->environment : std::string()];
    ++cell.traces;
    std::set<MotifId> present;
    for (const auto& h : hits) present.insert(h.motif);
    for (const auto m : present) ++cell.with_hit[m];
  }

  for (auto& [label, acc] : groups) {
    PrevalenceGroup g;
    g.label = label;
    g.keys = acc.keys;
    for (const auto& [env, cell] : acc.by_env) g.trace_count += cell.traces;
    for (const auto& m : kMotifs) {
      MotifRate rate;
      rate.trace_count = g.trace_count;
      double sum = 0.0;
      for (const auto& [env, cell] : acc.by_env) {
        const auto it = cell.with_hit.find(m.id);
        const std::size_t k = it == cell.with_hit.end() ? 0 : it->second;
        rate.traces_with_hit += k;
        sum += static_cast<double>(k) / static_cast<double>(cell.traces);
      }
      rate.fraction = sum / static_cast<double>(acc.by_env.size());
      g.rates.emplace(m.id, rate);
    }
    report.groups.push_back(std::move(g));
  }
  return report;
}

ordered_json hits_to_json(std::string_view trace_id, const std::vector<MotifHit>& hits) {
  ordered_json doc;
  doc["trace_id"] = trace_id;
  auto& arr = doc["hits"] = ordered_json::array();
  for (const auto& h : hits) {
    ordered_json bindings = ordered_json::object();
    for (const auto& role : info(h.motif).roles) {
      if (const auto it = h.bindings.find(std::string(role)); it != h.bindings.end()) bindings[it->first] = it->second;
    }
    arr.push_back({{"motif", to_string(h.motif)}, {"bindings", std::move(bindings)}});
  }
  return doc;
}

std::pair<std::string, std::vector<MotifHit>> hits_from_json(const json& doc) {
  if (!doc.is_object() || !doc.contains("trace_id") || !doc["trace_id"].is_string()) {
    throw ParseError("trace_id", "expected a string");
  }
  if (!doc.contains("hits") || !doc["hits"].is_array()) throw ParseError("hits", "expected an array");
  std::vector<MotifHit> hits;
  for (std::size_t i = 0; i < doc["hits"].size(); ++i) {
    const auto& h = doc["hits"][i];
    const auto field = "hits[" + std::to_string(i) + "]";
    if (!h.is_object() || !h.contains("motif") || !h["motif"].is_string()) {
      throw ParseError(field + ".motif", "expected a string");
    }
    const auto id = parse_motif(h["motif"].get<std::string>());
    if (!id) throw ParseError(field + ".motif", "unknown motif '" + h["motif"].get<std::string>() + "'");
    MotifHit hit{*id, {}};
    if (h.contains("bindings")) {
      if (!h["bindings"].is_object()) throw ParseError(field + ".bindings", "expected an object");
      for (const auto& [role, node] : h["bindings"].items()) {
        if (!node.is_string()) throw ParseError(field + ".bindings." + role, "expected a string");
        hit.bindings.emplace(role, node.get<std::string>());
      }
    }
    hits.push_back(std::move(hit));
  }
  return {doc["trace_id"].get<std::string>(), std::move(hits)};
}

ordered_json to_json(const PrevalenceReport& report) {
  ordered_json doc;
  auto& fields = doc["group_by"] = ordered_json::array();
  for (const auto f : report.group_by) fields.push_back(trace::to_string(f));
  doc["environment_averaged"] = report.environment_averaged;
  auto& groups = doc["groups"] = ordered_json::array();
  for (const auto& g : report.groups) {
    ordered_json entry;
    entry["label"] = g.label;
    entry["keys"] = g.keys;
    entry["trace_count"] = g.trace_count;
    auto& motifs = entry["motifs"] = ordered_json::object();
    for (const auto id : table_order()) {
      const auto& r = g.rates.at(id);
      motifs[std::string(to_string(id))] = {
          {"fraction", r.fraction}, {"traces_with_hit", r.traces_with_hit}, {"trace_count", r.trace_count}};
    }
    groups.push_back(std::move(entry));
  }
  return doc;
}

std::string to_tsv(const PrevalenceReport& report, int precision) {
  std::ostringstream os;
  os << "family\tpolarity\tpattern";
  for (const auto& g : report.groups) os << '\t' << g.label;
  os << '\n';
  for (const auto id : table_order()) {
    const auto& m = info(id);
    os << to_string(m.family) << '\t' << to_string(m.polarity) << '\t' << m.display_name;
    for (const auto& g : report.groups) os << '\t' << fraction_text(g.rates.at(id).fraction, precision);
    os << '\n';
  }
  return os.str();
}

}  // namespace epitrace::motif
