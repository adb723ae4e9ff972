#include "xvf/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "xvf/archive.hpp"
#include "xvf/error.hpp"
#include "xvf/rng.hpp"

namespace xvf {

namespace {

struct BaseModel {
  std::vector<Vector> means;
  Vector noise;
  std::vector<Matrix> speaker_basis;  // per component, dim x rank
  Vector domain_offset;
};

struct Speaker {
  std::string id;
  std::vector<Vector> means;  // base + speaker offset, per component
};

std::string numbered(const char* prefix, std::size_t n) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%04zu", prefix, n);
  return buf;
}

Vector normal_vector(Rng& rng, std::size_t dim, double scale) {
  Vector v(static_cast<Eigen::Index>(dim));
  for (auto& x : v) x = rng.normal(0.0, scale);
  return v;
}

FeatureMatrix sample_utterance(const CorpusOptions& opt, const BaseModel& base, const Speaker& spk,
                               std::size_t frames, bool shifted, Rng rng) {
  Vector session = normal_vector(rng, opt.dim, shifted ? opt.domain_session_scale : opt.session_scale);
  if (shifted) session += base.domain_offset;
  FeatureMatrix f;
  f.frames.resize(static_cast<Eigen::Index>(frames), static_cast<Eigen::Index>(opt.dim));
  auto component = static_cast<std::size_t>(rng.index(opt.num_components));
  for (std::size_t t = 0; t < frames; ++t) {
    if (t > 0 && rng.uniform() >= opt.stay_probability) component = rng.index(opt.num_components);
    const Vector& mean = spk.means[component];
    for (std::size_t j = 0; j < opt.dim; ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      f.frames(static_cast<Eigen::Index>(t), jj) = mean(jj) + session(jj) + base.noise(jj) * rng.normal();
    }
  }
  return f;
}

}  // namespace

std::string_view split_name(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kEnroll: return "enroll";
    case Split::kTest: return "test";
    case Split::kUnlabeled: return "unlabeled";
  }
  return "?";
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::kTrain;
  if (text == "enroll") return Split::kEnroll;
  if (text == "test") return Split::kTest;
  if (text == "unlabeled") return Split::kUnlabeled;
  fail<IoError>("unknown split '", text, "'");
}

std::vector<const UtteranceRecord*> CorpusManifest::in_split(Split split) const {
  std::vector<const UtteranceRecord*> out;
  for (const auto& u : utterances) {
    if (u.split == split) out.push_back(&u);
  }
  return out;
}

void CorpusManifest::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  require<IoError>(out.good(), "cannot write manifest ", path.string());
  out << "# seed=" << seed << '\n';
  for (const auto& u : utterances) {
    out << u.id << ' ' << u.speaker << ' ' << u.frames << ' ' << split_name(u.split) << '\n';
  }
  require<IoError>(out.good(), "error writing ", path.string());
}

CorpusManifest CorpusManifest::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  require<IoError>(in.good(), "cannot open manifest ", path.string());
  CorpusManifest m;
  std::set<std::string> ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.rfind("# seed=", 0) == 0) {
      m.seed = std::stoull(line.substr(7));
      continue;
    }
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    UtteranceRecord r;
    std::string split;
    require<IoError>(static_cast<bool>(fields >> r.id >> r.speaker >> r.frames >> split), path.string(),
                     ":", line_no, ": expected '<utt-id> <spk-id> <frames> <split>'");
    try {
      r.split = parse_split(split);
    } catch (const IoError& e) {
      fail<IoError>(path.string(), ":", line_no, ": ", e.what());
    }
    require<IoError>(ids.insert(r.id).second, path.string(), ":", line_no, ": duplicate utterance id '",
                     r.id, "'");
    m.utterances.push_back(std::move(r));
  }
  return m;
}

Corpus generate_corpus(const CorpusOptions& opt) {
  require(opt.train_speakers >= 2, "synthetic corpus needs at least two training speakers, got ",
          opt.train_speakers);
  require(opt.utterances_per_train_speaker >= 1, "utterances per training speaker must be positive");
  require(opt.dim >= 1 && opt.num_components >= 1, "feature dimension and component count must be positive");
  require(opt.min_frames >= 1 && opt.min_frames <= opt.max_frames, "invalid utterance length range [",
          opt.min_frames, ", ", opt.max_frames, "]");
  require(opt.stay_probability >= 0.0 && opt.stay_probability <= 1.0, "stay probability must be in [0, 1]");
  require(opt.speaker_scale >= 0.0 && opt.session_scale >= 0.0 && opt.component_scale >= 0.0 &&
              opt.domain_offset_scale >= 0.0 && opt.domain_session_scale >= 0.0,
          "scales must be nonnegative");
  require(opt.noise_min > 0.0 && opt.noise_min <= opt.noise_max, "invalid frame noise range");
  require(opt.eval_speakers == 0 || (opt.enroll_per_speaker >= 1 && opt.test_per_speaker >= 1),
          "evaluation speakers need at least one enroll and one test utterance");

  const Rng root(opt.seed);
  Rng base_rng = root.derive(0);
  BaseModel base;
  for (std::size_t m = 0; m < opt.num_components; ++m) base.means.push_back(normal_vector(base_rng, opt.dim, opt.component_scale));
  base.noise.resize(static_cast<Eigen::Index>(opt.dim));
  for (auto& s : base.noise) s = opt.noise_min + (opt.noise_max - opt.noise_min) * base_rng.uniform();
  base.domain_offset = normal_vector(base_rng, opt.dim, opt.domain_offset_scale);
  if (opt.speaker_rank > 0) {
    // Unit-variance factors; each offset coordinate then has variance speaker_scale^2.
    const double scale = opt.speaker_scale / std::sqrt(double(opt.speaker_rank));
    for (std::size_t m = 0; m < opt.num_components; ++m) {
      Matrix basis(static_cast<Eigen::Index>(opt.dim), static_cast<Eigen::Index>(opt.speaker_rank));
      for (auto& x : basis.reshaped()) x = base_rng.normal(0.0, scale);
      base.speaker_basis.push_back(std::move(basis));
    }
  }

  Corpus corpus;
  corpus.manifest.seed = opt.seed;
  std::size_t speaker_index = 0;
  std::size_t utterance_index = 0;
  auto add_speaker = [&](std::span<const std::pair<Split, std::size_t>> plan) {
    ++speaker_index;
    Rng spk_rng = root.derive(1'000'000 + speaker_index);
    Speaker spk{numbered("spk", speaker_index), {}};
    const Vector factors = normal_vector(spk_rng, opt.speaker_rank, 1.0);
    for (std::size_t m = 0; m < opt.num_components; ++m) {
      spk.means.push_back(base.means[m] + (opt.speaker_rank > 0 ? Vector(base.speaker_basis[m] * factors)
                                                                : normal_vector(spk_rng, opt.dim, opt.speaker_scale)));
    }
    std::size_t local = 0;
    for (const auto& [split, count] : plan) {
      for (std::size_t i = 0; i < count; ++i) {
        ++utterance_index;
        ++local;
        Rng utt_rng = root.derive(2'000'000 + utterance_index);
        const std::size_t frames = opt.min_frames + utt_rng.index(opt.max_frames - opt.min_frames + 1);
        UtteranceRecord r{spk.id + "-" + numbered("utt", local), spk.id, frames, split};
        corpus.features.push_back(sample_utterance(opt, base, spk, frames, split != Split::kTrain, utt_rng.derive(1)));
        corpus.manifest.utterances.push_back(std::move(r));
      }
    }
  };

  for (std::size_t s = 0; s < opt.train_speakers; ++s) {
    const std::pair<Split, std::size_t> plan[] = {{Split::kTrain, opt.utterances_per_train_speaker}};
    add_speaker(plan);
  }
  for (std::size_t s = 0; s < opt.eval_speakers; ++s) {
    const std::pair<Split, std::size_t> plan[] = {{Split::kEnroll, opt.enroll_per_speaker},
                                                  {Split::kTest, opt.test_per_speaker}};
    add_speaker(plan);
  }
  for (std::size_t s = 0; s < opt.unlabeled_speakers; ++s) {
    const std::pair<Split, std::size_t> plan[] = {{Split::kUnlabeled, opt.utterances_per_unlabeled_speaker}};
    add_speaker(plan);
  }
  return corpus;
}

Corpus generate_corpus(std::size_t num_speakers, std::size_t utts_per_speaker, std::size_t frames_per_utt,
                       std::uint64_t seed) {
  CorpusOptions opt;
  opt.train_speakers = num_speakers;
  opt.utterances_per_train_speaker = utts_per_speaker;
  opt.min_frames = opt.max_frames = frames_per_utt;
  opt.eval_speakers = 0;
  opt.unlabeled_speakers = 0;
  opt.seed = seed;
  return generate_corpus(opt);
}

TrialSet generate_trials(const CorpusManifest& manifest, std::size_t num_target, std::size_t num_nontarget,
                         std::uint64_t seed) {
  const auto enroll = manifest.in_split(Split::kEnroll);
  const auto test = manifest.in_split(Split::kTest);
  require(!enroll.empty() && !test.empty(), "trial generation needs nonempty enroll and test splits");
  TrialSet targets, nontargets;
  for (const auto* e : enroll) {
    for (const auto* t : test) {
      if (e->id == t->id) continue;
      Trial trial{e->id, t->id, e->speaker == t->speaker ? TrialLabel::kTarget : TrialLabel::kNontarget};
      (trial.label == TrialLabel::kTarget ? targets : nontargets).push_back(std::move(trial));
    }
  }
  require(num_target <= targets.size(), "requested ", num_target, " target trials but only ",
          targets.size(), " target pairs exist");
  require(num_nontarget <= nontargets.size(), "requested ", num_nontarget, " nontarget trials but only ",
          nontargets.size(), " nontarget pairs exist");
  Rng rng(seed);
  rng.shuffle(targets);
  rng.shuffle(nontargets);
  TrialSet trials(targets.begin(), targets.begin() + static_cast<std::ptrdiff_t>(num_target));
  trials.insert(trials.end(), nontargets.begin(), nontargets.begin() + static_cast<std::ptrdiff_t>(num_nontarget));
  rng.shuffle(trials);
  return trials;
}

void write_feature_archive(const std::filesystem::path& path, std::span<const std::string> ids,
                           std::span<const FeatureMatrix> features) {
  require<ShapeError>(ids.size() == features.size(), "feature archive: ", ids.size(), " ids for ",
                      features.size(), " matrices");
  Archive archive;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    archive.put(ids[i], features[i].frames);
    const double timing[] = {features[i].frame_shift, features[i].frame_length};
    archive.put(ids[i] + "#timing", std::span<const double>(timing), {2});
  }
  archive.save(path);
}

const FeatureMatrix& FeatureArchive::at(std::string_view id) const {
  const auto it = index.find(id);
  if (it != index.end()) return features[it->second];
  fail<IoError>("feature archive has no utterance '", id, "'");
}

FeatureArchive read_feature_archive(const std::filesystem::path& path) {
  const Archive archive = Archive::load(path);
  FeatureArchive out;
  for (const auto& r : archive.records()) {
    if (r.name.ends_with("#timing")) continue;
    FeatureMatrix f;
    f.frames = archive.matrix(r.name);
    const std::string timing = r.name + "#timing";
    if (archive.contains(timing)) {
      const Tensor t = archive.tensor(timing);
      f.frame_shift = t[0];
      f.frame_length = t[1];
    }
    out.index.emplace(r.name, out.ids.size());
    out.ids.push_back(r.name);
    out.features.push_back(std::move(f));
  }
  return out;
}

}  // namespace xvf
