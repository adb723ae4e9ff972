#include "xvf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "xvf/error.hpp"

namespace xvf {

std::string_view trial_label_name(TrialLabel label) {
  switch (label) {
    case TrialLabel::kTarget: return "target";
    case TrialLabel::kNontarget: return "nontarget";
    case TrialLabel::kUnknown: return "unknown";
  }
  return "unknown";
}

TrialLabel parse_trial_label(std::string_view text) {
  if (text == "target") return TrialLabel::kTarget;
  if (text == "nontarget") return TrialLabel::kNontarget;
  if (text == "unknown") return TrialLabel::kUnknown;
  fail<IoError>("invalid trial label '", text, "' (expected target, nontarget or unknown)");
}

std::vector<double> ScoreSet::target_scores() const {
  require<ShapeError>(trials.size() == scores.size(), "score set has ", scores.size(), " scores for ",
                      trials.size(), " trials");
  std::vector<double> out;
  for (std::size_t i = 0; i < trials.size(); ++i) {
    if (trials[i].label == TrialLabel::kTarget) out.push_back(scores[i]);
  }
  return out;
}

std::vector<double> ScoreSet::nontarget_scores() const {
  require<ShapeError>(trials.size() == scores.size(), "score set has ", scores.size(), " scores for ",
                      trials.size(), " trials");
  std::vector<double> out;
  for (std::size_t i = 0; i < trials.size(); ++i) {
    if (trials[i].label == TrialLabel::kNontarget) out.push_back(scores[i]);
  }
  return out;
}

std::vector<RocPoint> roc_curve(std::span<const double> targets, std::span<const double> nontargets) {
  require(!targets.empty() && !nontargets.empty(),
          "detection metrics need at least one target and one nontarget trial (got ", targets.size(),
          " and ", nontargets.size(), ")");
  for (double s : targets) require<NumericError>(std::isfinite(s), "non-finite target score");
  for (double s : nontargets) require<NumericError>(std::isfinite(s), "non-finite nontarget score");
  std::vector<double> tgt(targets.begin(), targets.end());
  std::vector<double> non(nontargets.begin(), nontargets.end());
  std::sort(tgt.begin(), tgt.end());
  std::sort(non.begin(), non.end());
  std::vector<double> all(tgt);
  all.insert(all.end(), non.begin(), non.end());
  std::sort(all.begin(), all.end());
  all.erase(std::unique(all.begin(), all.end()), all.end());

  const double nt = double(tgt.size());
  const double nn = double(non.size());
  std::vector<RocPoint> roc;
  roc.reserve(all.size() + 1);
  std::size_t miss = 0;      // targets below threshold
  std::size_t rejected = 0;  // nontargets below threshold
  for (double theta : all) {
    while (miss < tgt.size() && tgt[miss] < theta) ++miss;
    while (rejected < non.size() && non[rejected] < theta) ++rejected;
    roc.push_back({theta, double(miss) / nt, double(non.size() - rejected) / nn});
  }
  roc.push_back({std::numeric_limits<double>::infinity(), 1.0, 0.0});
  return roc;
}

double compute_eer(std::span<const double> targets, std::span<const double> nontargets) {
  const auto roc = roc_curve(targets, nontargets);
  // p_miss - p_fa is nondecreasing along the curve and ends at +1.
  std::size_t i = 0;
  while (roc[i].p_miss - roc[i].p_fa < 0.0) ++i;
  const double d1 = roc[i].p_miss - roc[i].p_fa;
  if (d1 == 0.0 || i == 0) return roc[i].p_miss;
  const double d0 = roc[i - 1].p_miss - roc[i - 1].p_fa;
  const double t = -d0 / (d1 - d0);
  return roc[i - 1].p_miss + t * (roc[i].p_miss - roc[i - 1].p_miss);
}

double compute_eer(const ScoreSet& scores) {
  return compute_eer(scores.target_scores(), scores.nontarget_scores());
}

double compute_mindcf(std::span<const double> targets, std::span<const double> nontargets,
                      double p_target, double c_miss, double c_fa) {
  require(p_target > 0.0 && p_target < 1.0, "minDCF target prior must be in (0, 1), got ", p_target);
  require(c_miss > 0.0 && c_fa > 0.0, "minDCF costs must be positive");
  const auto roc = roc_curve(targets, nontargets);
  double best = std::numeric_limits<double>::infinity();
  for (const RocPoint& p : roc) {
    best = std::min(best, c_miss * p_target * p.p_miss + c_fa * (1.0 - p_target) * p.p_fa);
  }
  return best / std::min(c_miss * p_target, c_fa * (1.0 - p_target));
}

double compute_mindcf(std::span<const double> targets, std::span<const double> nontargets,
                      const DcfOptions& options) {
  require(!options.p_targets.empty(), "minDCF needs at least one operating point");
  double sum = 0.0;
  for (double p : options.p_targets) sum += compute_mindcf(targets, nontargets, p, options.c_miss, options.c_fa);
  return sum / double(options.p_targets.size());
}

double compute_mindcf(const ScoreSet& scores, const DcfOptions& options) {
  return compute_mindcf(scores.target_scores(), scores.nontarget_scores(), options);
}

TrialSet read_trials(const std::filesystem::path& path) {
  std::ifstream in(path);
  require<IoError>(in.good(), "cannot open trial list ", path.string());
  TrialSet trials;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream fields(line);
    Trial t;
    std::string label, extra;
    if (!(fields >> t.enroll)) continue;
    require<IoError>(static_cast<bool>(fields >> t.test), path.string(), ":", line_no, ": missing test id");
    if (fields >> label) {
      try {
        t.label = parse_trial_label(label);
      } catch (const IoError& e) {
        fail<IoError>(path.string(), ":", line_no, ": ", e.what());
      }
    }
    require<IoError>(!(fields >> extra), path.string(), ":", line_no, ": unexpected extra field '", extra, "'");
    trials.push_back(std::move(t));
  }
  return trials;
}

void write_trials(const std::filesystem::path& path, const TrialSet& trials) {
  std::ofstream out(path);
  require<IoError>(out.good(), "cannot write trial list ", path.string());
  for (const auto& t : trials) out << t.enroll << ' ' << t.test << ' ' << trial_label_name(t.label) << '\n';
  require<IoError>(out.good(), "error writing ", path.string());
}

void write_scores(const std::filesystem::path& path, const ScoreSet& scores) {
  require<ShapeError>(scores.trials.size() == scores.scores.size(), "score set has ", scores.scores.size(),
                      " scores for ", scores.trials.size(), " trials");
  std::ofstream out(path);
  require<IoError>(out.good(), "cannot write score file ", path.string());
  char buf[64];
  for (std::size_t i = 0; i < scores.trials.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.6f", scores.scores[i]);
    out << scores.trials[i].enroll << ' ' << scores.trials[i].test << ' ' << buf << '\n';
  }
  require<IoError>(out.good(), "error writing ", path.string());
}

ScoreSet read_scores(const std::filesystem::path& path, const TrialSet& trials) {
  std::ifstream in(path);
  require<IoError>(in.good(), "cannot open score file ", path.string());
  ScoreSet set;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream fields(line);
    Trial t;
    double score = 0.0;
    if (!(fields >> t.enroll)) continue;
    require<IoError>(static_cast<bool>(fields >> t.test >> score), path.string(), ":", line_no,
                     ": expected '<enroll> <test> <score>'");
    const std::size_t k = set.trials.size();
    require<IoError>(k < trials.size(), path.string(), ":", line_no, ": more scores than trials (",
                     trials.size(), ")");
    require<IoError>(trials[k].enroll == t.enroll && trials[k].test == t.test, path.string(), ":",
                     line_no, ": score for (", t.enroll, ", ", t.test, ") but trial ", k + 1, " is (",
                     trials[k].enroll, ", ", trials[k].test, ")");
    t.label = trials[k].label;
    set.trials.push_back(std::move(t));
    set.scores.push_back(score);
  }
  require<IoError>(set.trials.size() == trials.size(), path.string(), " has ", set.trials.size(),
                   " scores for ", trials.size(), " trials");
  return set;
}

std::string MetricsReport::to_text() const {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "eer=%.6f\nmin_dcf=%.6f\nnum_target=%zu\nnum_nontarget=%zu\n", eer,
                min_dcf, num_target, num_nontarget);
  return buf;
}

MetricsReport evaluate_scores(const ScoreSet& scores, const DcfOptions& options) {
  const auto tgt = scores.target_scores();
  const auto non = scores.nontarget_scores();
  return {compute_eer(tgt, non), compute_mindcf(tgt, non, options), tgt.size(), non.size()};
}

}  // namespace xvf
