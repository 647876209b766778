#pragma once

// Exhaustive reference for the motif templates. Every template is checked by
// trying all assignments of nodes to its roles (witness roles included) over
// a dense adjacency tensor, then projecting onto the reported roles. Shares
// nothing with the production detector beyond the graph types.

#include <array>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "epitrace/epi_graph.hpp"
#include "epitrace/motif_engine.hpp"

namespace oracle {

using epitrace::graph::EpistemicGraph;
using epitrace::graph::NodeType;
using epitrace::graph::Relation;
using epitrace::motif::MotifHit;
using epitrace::motif::MotifId;

class Brute {
 public:
  explicit Brute(const EpistemicGraph& g) : g_(g), n_(g.nodes.size()) {
    adj_.assign(n_ * n_ * 6, false);
    std::map<std::string, std::size_t> id;
    for (std::size_t i = 0; i < n_; ++i) id.emplace(g.nodes[i].node_id, i);
    for (const auto& e : g.edges) {
      if (!e.relation || !id.contains(e.src) || !id.contains(e.dst)) continue;
      adj_[(id[e.src] * n_ + id[e.dst]) * 6 + static_cast<std::size_t>(*e.relation)] = true;
    }
  }

  std::set<MotifHit> all() {
    std::set<MotifHit> out;
    for (const auto& m : epitrace::motif::all_motifs()) {
      for (auto& h : run(m.id)) out.insert(h);
    }
    return out;
  }

  std::set<MotifHit> run(MotifId m) {
    hits_.clear();
    motif_ = m;
    const auto N = n_;
    switch (m) {
      case MotifId::kEvidenceLedHypothesisGeneration:
        for (std::size_t e = 0; e < N; ++e)
          for (std::size_t h = 0; h < N; ++h)
            for (std::size_t t = 0; t < N; ++t)
              for (std::size_t x = 0; x < N; ++x) {
                if (!(is(e, NodeType::E) && is(h, NodeType::H) && is(t, NodeType::T))) continue;
                if (!(time(e) < time(h) && r(h, t, Relation::kTests))) continue;
                const bool path = r(e, h, Relation::kInforms) ||
                                  (is(x, NodeType::J) && r(e, x, Relation::kInforms) && r(x, h, Relation::kInforms));
                if (path) add({{"E", e}, {"H", h}});
              }
        break;
      case MotifId::kHypothesisReranking:
        for (std::size_t a = 0; a < N; ++a)
          for (std::size_t b = 0; b < N; ++b)
            for (std::size_t ta = 0; ta < N; ++ta)
              for (std::size_t tb = 0; tb < N; ++tb)
                if (is(a, NodeType::H) && is(b, NodeType::H) && is(ta, NodeType::T) && is(tb, NodeType::T) &&
                    r(a, b, Relation::kCompetesWith) && r(a, ta, Relation::kTests) && r(b, tb, Relation::kTests))
                  add({{"H1", a}, {"H2", b}});
        break;
      case MotifId::kRefutationDrivenBeliefRevision:
        for (std::size_t a = 0; a < N; ++a)
          for (std::size_t b = 0; b < N; ++b)
            for (std::size_t t = 0; t < N; ++t)
              for (std::size_t e = 0; e < N; ++e)
                if (is(a, NodeType::H) && is(b, NodeType::H) && is(t, NodeType::T) && is(e, NodeType::E) &&
                    r(a, b, Relation::kUpdatesTo) && r(a, t, Relation::kTests) && r(t, e, Relation::kObserves) &&
                    time(e) <= time(b))
                  add({{"H1", a}, {"H2", b}});
        break;
      case MotifId::kExploreThenTestTransition:
        for (std::size_t t1 = 0; t1 < N; ++t1)
          for (std::size_t e = 0; e < N; ++e)
            for (std::size_t h = 0; h < N; ++h)
              for (std::size_t t = 0; t < N; ++t) {
                if (!(is(t1, NodeType::T) && is(e, NodeType::E) && is(h, NodeType::H) && is(t, NodeType::T))) continue;
                if (!(r(t1, e, Relation::kObserves) && r(h, t, Relation::kTests) && time(t1) < time(h))) continue;
                bool directed = false;
                for (std::size_t x = 0; x < N; ++x)
                  if ((is(x, NodeType::H) || is(x, NodeType::J)) && any_edge(x, t1)) directed = true;
                if (!directed) add({{"T1", t1}, {"H", h}});
              }
        break;
      case MotifId::kConvergentMultiTestEvidence:
        for (std::size_t h = 0; h < N; ++h)
          for (std::size_t t1 = 0; t1 < N; ++t1)
            for (std::size_t t2 = 0; t2 < N; ++t2)
              for (std::size_t e1 = 0; e1 < N; ++e1)
                for (std::size_t e2 = 0; e2 < N; ++e2)
                  if (t1 != t2 && is(h, NodeType::H) && is(t1, NodeType::T) && is(t2, NodeType::T) &&
                      is(e1, NodeType::E) && is(e2, NodeType::E) && r(h, t1, Relation::kTests) &&
                      r(h, t2, Relation::kTests) && r(t1, e1, Relation::kObserves) && r(t2, e2, Relation::kObserves))
                    add({{"H", h}});
        break;
      case MotifId::kFixedHypothesisTestTuning:
        for (std::size_t h = 0; h < N; ++h) {
          if (!is(h, NodeType::H) || out_any(h, Relation::kUpdatesTo)) continue;
          for (std::size_t t = 0; t < N; ++t)
            for (std::size_t e = 0; e < N; ++e)
              for (std::size_t j = 0; j < N; ++j)
                for (std::size_t t2 = 0; t2 < N; ++t2)
                  if (t != t2 && is(t, NodeType::T) && is(e, NodeType::E) && is(j, NodeType::J) &&
                      is(t2, NodeType::T) && r(h, t, Relation::kTests) && r(t, e, Relation::kObserves) &&
                      r(e, j, Relation::kInforms) && r(j, t2, Relation::kTests))
                    add({{"H", h}, {"J", j}});
        }
        break;
      case MotifId::kEvidenceGuidedTestRedesign:
        for (std::size_t j = 0; j < N; ++j)
          for (std::size_t t = 0; t < N; ++t)
            for (std::size_t e = 0; e < N; ++e)
              if (is(j, NodeType::J) && is(t, NodeType::T) && is(e, NodeType::E) && r(j, t, Relation::kTests) &&
                  r(t, e, Relation::kObserves))
                add({{"J", j}, {"T", t}});
        break;
      case MotifId::kUntestedClaim:
        for (std::size_t h = 0; h < N; ++h)
          if (is(h, NodeType::H) && !out_any(h, Relation::kTests)) add({{"H", h}});
        break;
      case MotifId::kOneSidedConfirmation:
        for (std::size_t c = 0; c < N; ++c) {
          if (!is(c, NodeType::C)) continue;
          const auto hs = associated(c);
          if (hs.empty()) continue;
          bool ok = true;
          for (const auto h : hs) ok = ok && in_any(h, Relation::kInforms) && !in_any(h, Relation::kContradicts);
          if (ok) add({{"C", c}});
        }
        break;
      case MotifId::kContradictionWithoutRepair:
        for (std::size_t x = 0; x < N; ++x)
          for (std::size_t h = 0; h < N; ++h)
            if ((is(x, NodeType::E) || is(x, NodeType::J)) && is(h, NodeType::H) && r(x, h, Relation::kContradicts) &&
                !out_any(h, Relation::kUpdatesTo) && !out_any(h, Relation::kCompetesWith) &&
                !in_any(h, Relation::kCompetesWith))
              add({{"X", x}, {"H", h}});
        break;
      case MotifId::kPrematureCommitment:
        for (std::size_t c = 0; c < N; ++c) {
          if (!is(c, NodeType::C)) continue;
          for (const auto h : associated(c))
            if (!out_any(h, Relation::kTests)) add({{"C", c}, {"H", h}});
        }
        break;
      case MotifId::kEvidenceNonUptake:
        for (std::size_t e = 0; e < N; ++e)
          if (is(e, NodeType::E) && in_degree(e) > 0 && out_degree(e) == 0) add({{"E", e}});
        break;
      case MotifId::kDisconnectedEvidence:
        for (std::size_t e = 0; e < N; ++e)
          if (is(e, NodeType::E) && in_degree(e) == 0 && out_degree(e) == 0) add({{"E", e}});
        break;
      case MotifId::kUnsupportedJudgment:
        for (std::size_t j = 0; j < N; ++j) {
          if (!is(j, NodeType::J)) continue;
          bool supported = false;
          for (std::size_t x = 0; x < N; ++x) supported = supported || (is(x, NodeType::E) && r(x, j, Relation::kInforms));
          if (!supported) add({{"J", j}});
        }
        break;
      case MotifId::kUninformativeTest:
        for (std::size_t t = 0; t < N; ++t)
          if (is(t, NodeType::T) && !out_any(t, Relation::kObserves)) add({{"T", t}});
        break;
      case MotifId::kFixedBeliefTrace: {
        bool any_h = false;
        bool any_update = false;
        for (std::size_t a = 0; a < N; ++a) {
          any_h = any_h || is(a, NodeType::H);
          any_update = any_update || out_any(a, Relation::kUpdatesTo);
        }
        if (any_h && !any_update) hits_.insert(MotifHit{m, {}});
        break;
      }
      case MotifId::kPrecommittedTestPlan:
        for (std::size_t c = 0; c < N; ++c) {
          if (!is(c, NodeType::C)) continue;
          bool any_e = false;
          bool before_all = true;
          for (std::size_t e = 0; e < N; ++e) {
            if (!is(e, NodeType::E)) continue;
            any_e = true;
            before_all = before_all && time(c) < time(e);
          }
          if (any_e && before_all) add({{"C", c}});
        }
        break;
      case MotifId::kStalledRevision:
        for (std::size_t a = 0; a < N; ++a)
          for (std::size_t b = 0; b < N; ++b)
            if (is(b, NodeType::H) && r(a, b, Relation::kUpdatesTo) && !out_any(b, Relation::kTests) &&
                !out_any(b, Relation::kUpdatesTo))
              add({{"H2", b}});
        break;
    }
    return hits_;
  }

 private:
  bool is(std::size_t i, NodeType t) const { return g_.nodes[i].type == t; }
  int time(std::size_t i) const { return g_.nodes[i].time; }
  bool r(std::size_t s, std::size_t d, Relation rel) const {
    return adj_[(s * n_ + d) * 6 + static_cast<std::size_t>(rel)];
  }
  bool any_edge(std::size_t s, std::size_t d) const {
    for (std::size_t k = 0; k < 6; ++k)
      if (adj_[(s * n_ + d) * 6 + k]) return true;
    return false;
  }
  bool out_any(std::size_t s, Relation rel) const {
    for (std::size_t d = 0; d < n_; ++d)
      if (r(s, d, rel)) return true;
    return false;
  }
  bool in_any(std::size_t d, Relation rel) const {
    for (std::size_t s = 0; s < n_; ++s)
      if (r(s, d, rel)) return true;
    return false;
  }
  std::size_t out_degree(std::size_t s) const {
    std::size_t k = 0;
    for (std::size_t d = 0; d < n_; ++d)
      for (std::size_t rel = 0; rel < 6; ++rel) k += adj_[(s * n_ + d) * 6 + rel] ? 1 : 0;
    return k;
  }
  std::size_t in_degree(std::size_t d) const {
    std::size_t k = 0;
    for (std::size_t s = 0; s < n_; ++s)
      for (std::size_t rel = 0; rel < 6; ++rel) k += adj_[(s * n_ + d) * 6 + rel] ? 1 : 0;
    return k;
  }

  std::vector<std::size_t> associated(std::size_t c) const {
    std::vector<std::size_t> hs;
    for (std::size_t h = 0; h < n_; ++h) {
      if (!is(h, NodeType::H)) continue;
      for (std::size_t w = 0; w < n_; ++w) {
        if ((is(w, NodeType::J) || is(w, NodeType::E)) && r(w, h, Relation::kInforms) && r(w, c, Relation::kInforms)) {
          hs.push_back(h);
          break;
        }
      }
    }
    if (!hs.empty()) return hs;
    for (std::size_t h = 0; h < n_; ++h) {
      if (!is(h, NodeType::H) || time(h) >= time(c)) continue;
      bool latest = true;
      for (std::size_t o = 0; o < n_; ++o)
        if (is(o, NodeType::H) && time(o) < time(c) && time(o) > time(h)) latest = false;
      if (latest) hs.push_back(h);
    }
    return hs;
  }

  void add(std::initializer_list<std::pair<const char*, std::size_t>> roles) {
    MotifHit h{motif_, {}};
    for (const auto& [role, node] : roles) h.bindings.emplace(role, g_.nodes[node].node_id);
    hits_.insert(std::move(h));
  }

  const EpistemicGraph& g_;
  std::size_t n_;
  std::vector<bool> adj_;
  MotifId motif_ = MotifId::kUntestedClaim;
  std::set<MotifHit> hits_;
};

}  // namespace oracle
