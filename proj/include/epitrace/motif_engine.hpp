#pragma once

#include <array>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "epitrace/epi_graph.hpp"
#include "epitrace/trace.hpp"

namespace epitrace::motif {

enum class MotifId {
  // productive
  kEvidenceLedHypothesisGeneration,
  kHypothesisReranking,
  kRefutationDrivenBeliefRevision,
  kExploreThenTestTransition,
  kConvergentMultiTestEvidence,
  kFixedHypothesisTestTuning,
  kEvidenceGuidedTestRedesign,
  // breakdowns
  kUntestedClaim,
  kOneSidedConfirmation,
  kContradictionWithoutRepair,
  kPrematureCommitment,
  kEvidenceNonUptake,
  kDisconnectedEvidence,
  kUnsupportedJudgment,
  kUninformativeTest,
  kFixedBeliefTrace,
  kPrecommittedTestPlan,
  kStalledRevision,
};

enum class Family { kHypothesisHandling, kEvidenceHandling, kInquiryControl };
enum class Polarity { kProductive, kBreakdown };

struct MotifInfo {
  MotifId id;
  std::string_view name;
  std::string_view display_name;
  Family family;
  Polarity polarity;
  // Template roles reported in a hit's bindings, in canonical order.
  std::span<const std::string_view> roles;
};

inline constexpr std::size_t kMotifCount = 18;

const std::array<MotifInfo, kMotifCount>& all_motifs();
const MotifInfo& info(MotifId id);
std::string_view to_string(MotifId id);
std::optional<MotifId> parse_motif(std::string_view name);
std::string_view to_string(Family family);
std::string_view to_string(Polarity polarity);

// Row order of the prevalence table: family, then productive before
// breakdown, then declaration order.
std::vector<MotifId> table_order();

struct MotifHit {
  MotifId motif;
  std::map<std::string, std::string> bindings;  // role -> node_id

  auto operator<=>(const MotifHit&) const = default;
};

// All hits, sorted and without duplicates. Edges whose endpoints are not
// nodes of the graph are ignored.
std::vector<MotifHit> detect(const graph::EpistemicGraph& graph);
std::vector<MotifHit> detect_one(const graph::EpistemicGraph& graph, MotifId motif);

// H nodes a commitment node is taken to commit to: hypotheses informed by a
// J or E that also informs the commitment; failing that, every H at the
// latest time before the commitment.
std::vector<std::string> committed_hypotheses(const graph::EpistemicGraph& graph, std::string_view commitment_id);

struct MotifRate {
  double fraction = 0.0;
  std::size_t traces_with_hit = 0;
  std::size_t trace_count = 0;
};

struct PrevalenceGroup {
  std::string label;
  std::map<std::string, std::string> keys;  // field name -> value
  std::size_t trace_count = 0;
  std::map<MotifId, MotifRate> rates;
};

struct PrevalenceReport {
  std::vector<trace::GroupField> group_by;
  bool environment_averaged = false;
  std::vector<PrevalenceGroup> groups;
};

struct PrevalenceOptions {
  // When the environment is not a grouping key, compute each environment's
  // fraction first and average them with equal weight.
  bool average_over_environments = true;
};

// Throws ValidationError when a trace id is not in `corpus`.
PrevalenceReport prevalence(const std::map<std::string, std::vector<MotifHit>>& results,
                            const trace::TraceCorpus& corpus, std::span<const trace::GroupField> group_by,
                            const PrevalenceOptions& options = {});

// {trace_id, hits: [{motif, bindings}]}
nlohmann::ordered_json hits_to_json(std::string_view trace_id, const std::vector<MotifHit>& hits);
std::pair<std::string, std::vector<MotifHit>> hits_from_json(const nlohmann::json& doc);

nlohmann::ordered_json to_json(const PrevalenceReport& report);
// Tab-separated table: one row per motif in table order, one column per group.
std::string to_tsv(const PrevalenceReport& report, int precision = 2);

}  // namespace epitrace::motif
