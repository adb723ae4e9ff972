#pragma once

// Trial lists, score files and detection metrics (EER, minDCF).

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace xvf {

enum class TrialLabel { kTarget, kNontarget, kUnknown };

std::string_view trial_label_name(TrialLabel label);
TrialLabel parse_trial_label(std::string_view text);

struct Trial {
  std::string enroll;
  std::string test;
  TrialLabel label = TrialLabel::kUnknown;
};

using TrialSet = std::vector<Trial>;

struct ScoreSet {
  TrialSet trials;
  std::vector<double> scores;  // parallel to trials

  /// Scores split by label; unknown trials are skipped.
  std::vector<double> target_scores() const;
  std::vector<double> nontarget_scores() const;
};

/// One ROC vertex: all trials with score >= threshold are accepted.
struct RocPoint {
  double threshold;
  double p_miss;
  double p_fa;
};

/// Vertices at every distinct score in increasing order, followed by the
/// reject-all point (threshold +inf, p_miss = 1, p_fa = 0).
std::vector<RocPoint> roc_curve(std::span<const double> targets, std::span<const double> nontargets);

/// Rate where P_miss = P_fa, interpolated linearly between adjacent vertices.
double compute_eer(std::span<const double> targets, std::span<const double> nontargets);
double compute_eer(const ScoreSet& scores);

struct DcfOptions {
  std::vector<double> p_targets{0.01, 0.005};
  double c_miss = 1.0;
  double c_fa = 1.0;
};

/// Normalized minimum detection cost for one operating point.
double compute_mindcf(std::span<const double> targets, std::span<const double> nontargets,
                      double p_target, double c_miss = 1.0, double c_fa = 1.0);
/// Average of the normalized minimum costs over options.p_targets.
double compute_mindcf(std::span<const double> targets, std::span<const double> nontargets,
                      const DcfOptions& options = {});
double compute_mindcf(const ScoreSet& scores, const DcfOptions& options = {});

/// `<enroll> <test> <target|nontarget>`; a missing label column reads as unknown.
TrialSet read_trials(const std::filesystem::path& path);
void write_trials(const std::filesystem::path& path, const TrialSet& trials);

/// `<enroll> <test> <score>` with six decimals.
void write_scores(const std::filesystem::path& path, const ScoreSet& scores);
/// Reads scores and attaches labels from `trials`; the pairs must match line by line.
ScoreSet read_scores(const std::filesystem::path& path, const TrialSet& trials);

struct MetricsReport {
  double eer = 0.0;
  double min_dcf = 0.0;
  std::size_t num_target = 0;
  std::size_t num_nontarget = 0;

  std::string to_text() const;
};

MetricsReport evaluate_scores(const ScoreSet& scores, const DcfOptions& options = {});

}  // namespace xvf
