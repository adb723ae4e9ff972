#include "xvf/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include "xvf/archive.hpp"
#include "xvf/backend.hpp"
#include "xvf/corpus.hpp"
#include "xvf/error.hpp"
#include "xvf/features.hpp"
#include "xvf/gmm.hpp"
#include "xvf/ivector.hpp"
#include "xvf/metrics.hpp"
#include "xvf/parallel.hpp"
#include "xvf/rng.hpp"
#include "xvf/trainer.hpp"

namespace xvf {

namespace {

constexpr std::string_view kKnownKeys[] = {
    "workdir", "system", "seed",  "threads", "scale",     "corpus.*", "trials.*", "features.*",
    "ubm.*",   "bw.*",   "tv.*",  "model.*", "train.*",   "backend.*", "dcf.*",
};

// Files in the work directory.
constexpr const char* kManifest = "manifest.txt";
constexpr const char* kTrials = "trials.txt";
constexpr const char* kRawFeats = "raw_feats.ark";
constexpr const char* kFeats = "feats.ark";
constexpr const char* kUbm = "ubm.ark";
constexpr const char* kStats = "bw_stats.ark";
constexpr const char* kTv = "tv.ark";
constexpr const char* kIvectors = "ivectors.ark";
constexpr const char* kEmbedder = "embedder.ark";
constexpr const char* kXvectors = "xvectors.ark";
constexpr const char* kBackend = "backend.ark";
constexpr const char* kScores = "scores.txt";
constexpr const char* kMetrics = "metrics.txt";

// Seed streams per stage.
enum : std::uint64_t { kSeedCorpus = 1, kSeedTrials, kSeedUbm, kSeedTv, kSeedModel, kSeedTrainer };

std::uint64_t stage_seed(const PipelineConfig& c, std::uint64_t stream) {
  return Rng(c.seed).derive(stream).next_u64();
}

bool desk(const PipelineConfig& c) { return c.scale == ModelScale::kDesk; }

std::filesystem::path need(const PipelineConfig& c, const char* file, const char* producer) {
  const auto p = c.path(file);
  require<IoError>(std::filesystem::exists(p), "missing ", p.string(), "; run stage '", producer, "' first");
  return p;
}

std::vector<double> parse_doubles(const KeyValueConfig& kv, const std::string& key, std::vector<double> fallback) {
  if (!kv.contains(key)) return fallback;
  const std::string text = kv.get(key);
  std::vector<double> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find(',', start);
    if (end == std::string::npos) end = text.size();
    std::string item = text.substr(start, end - start);
    item.erase(0, item.find_first_not_of(' '));
    item.erase(item.find_last_not_of(' ') + 1);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    require<ConfigError>(ec == std::errc() && ptr == item.data() + item.size() && !item.empty(), "key '", key,
                         "': '", item, "' is not a number");
    out.push_back(v);
    start = end + 1;
  }
  return out;
}

struct Embeddings {
  std::vector<std::string> ids;
  std::map<std::string, Vector, std::less<>> by_id;

  const Vector& at(std::string_view id, const std::filesystem::path& source) const {
    const auto it = by_id.find(id);
    require<IoError>(it != by_id.end(), source.string(), " has no embedding for '", id, "'");
    return it->second;
  }
};

void save_embeddings(const std::filesystem::path& path, const std::vector<std::string>& ids,
                     const std::vector<Vector>& vectors) {
  Archive a;
  for (std::size_t i = 0; i < ids.size(); ++i) a.put(ids[i], vectors[i]);
  a.save(path);
}

Embeddings load_embeddings(const std::filesystem::path& path) {
  const Archive a = Archive::load(path);
  Embeddings e;
  for (const auto& r : a.records()) {
    e.ids.push_back(r.name);
    e.by_id.emplace(r.name, a.vector(r.name));
  }
  return e;
}

std::map<std::string, BwStats, std::less<>> load_stats(const std::filesystem::path& path,
                                                        const CorpusManifest& manifest) {
  const Archive a = Archive::load(path);
  std::map<std::string, BwStats, std::less<>> out;
  for (const auto& u : manifest.utterances) out.emplace(u.id, BwStats::load(a, u.id));
  return out;
}

/// Speaker ids of the training split mapped to dense class indices.
std::map<std::string, std::size_t> speaker_index(const CorpusManifest& manifest) {
  std::map<std::string, std::size_t> index;
  for (const auto* u : manifest.in_split(Split::kTrain)) index.emplace(u->speaker, 0);
  std::size_t next = 0;
  for (auto& [spk, i] : index) i = next++;
  return index;
}

std::vector<const UtteranceRecord*> ubm_training_set(const CorpusManifest& manifest) {
  auto set = manifest.in_split(Split::kUnlabeled);
  if (set.empty()) {
    warn("no unlabeled utterances; training the UBM on the training split");
    set = manifest.in_split(Split::kTrain);
  }
  require(!set.empty(), "no utterances available for UBM training");
  return set;
}

// ---------------------------------------------------------------------------
// Stages

void stage_gen_corpus(const PipelineConfig& c, std::ostream& log) {
  const KeyValueConfig& kv = c.values;
  CorpusOptions o;
  o.train_speakers = kv.get_size("corpus.train_speakers", o.train_speakers);
  o.utterances_per_train_speaker = kv.get_size("corpus.utterances_per_train_speaker", o.utterances_per_train_speaker);
  o.eval_speakers = kv.get_size("corpus.eval_speakers", o.eval_speakers);
  o.enroll_per_speaker = kv.get_size("corpus.enroll_per_speaker", o.enroll_per_speaker);
  o.test_per_speaker = kv.get_size("corpus.test_per_speaker", o.test_per_speaker);
  o.unlabeled_speakers = kv.get_size("corpus.unlabeled_speakers", o.unlabeled_speakers);
  o.utterances_per_unlabeled_speaker =
      kv.get_size("corpus.utterances_per_unlabeled_speaker", o.utterances_per_unlabeled_speaker);
  o.min_frames = kv.get_size("corpus.min_frames", o.min_frames);
  o.max_frames = kv.get_size("corpus.max_frames", o.max_frames);
  o.dim = kv.get_size("corpus.dim", o.dim);
  o.num_components = kv.get_size("corpus.num_components", o.num_components);
  o.stay_probability = kv.get_double("corpus.stay_probability", o.stay_probability);
  o.component_scale = kv.get_double("corpus.component_scale", o.component_scale);
  o.speaker_scale = kv.get_double("corpus.speaker_scale", o.speaker_scale);
  o.speaker_rank = kv.get_size("corpus.speaker_rank", o.speaker_rank);
  o.session_scale = kv.get_double("corpus.session_scale", o.session_scale);
  o.domain_offset_scale = kv.get_double("corpus.domain_offset_scale", o.domain_offset_scale);
  o.domain_session_scale = kv.get_double("corpus.domain_session_scale", o.domain_session_scale);
  o.noise_min = kv.get_double("corpus.noise_min", o.noise_min);
  o.noise_max = kv.get_double("corpus.noise_max", o.noise_max);
  o.seed = stage_seed(c, kSeedCorpus);
  const Corpus corpus = generate_corpus(o);
  corpus.manifest.save(c.path(kManifest));
  std::vector<std::string> ids;
  for (const auto& u : corpus.manifest.utterances) ids.push_back(u.id);
  write_feature_archive(c.path(kRawFeats), ids, corpus.features);

  std::size_t all_target = 0, all_nontarget = 0;
  for (const auto* e : corpus.manifest.in_split(Split::kEnroll)) {
    for (const auto* t : corpus.manifest.in_split(Split::kTest)) {
      (e->speaker == t->speaker ? all_target : all_nontarget) += 1;
    }
  }
  if (all_target + all_nontarget > 0) {
    const TrialSet trials = generate_trials(corpus.manifest, kv.get_size("trials.num_target", all_target),
                                            kv.get_size("trials.num_nontarget", all_nontarget),
                                            stage_seed(c, kSeedTrials));
    write_trials(c.path(kTrials), trials);
    log << "  " << trials.size() << " trials\n";
  }
  log << "  " << corpus.manifest.utterances.size() << " utterances\n";
}

void stage_features(const PipelineConfig& c, std::ostream& log) {
  const KeyValueConfig& kv = c.values;
  if (kv.contains("features.wav_scp")) {
    MfccOptions mfcc;
    mfcc.num_ceps = kv.get_size("features.num_ceps", mfcc.num_ceps);
    mfcc.num_mel_bins = kv.get_size("features.num_mel_bins", mfcc.num_mel_bins);
    VadOptions vad;
    vad.mean_offset = kv.get_double("features.vad_mean_offset", vad.mean_offset);
    vad.absolute_threshold = kv.get_double("features.vad_threshold", vad.absolute_threshold);
    const bool use_cmn = kv.get_bool("features.cmn", true);
    const bool use_vad = kv.get_bool("features.vad", true);
    const double cmn_window = kv.get_double("features.cmn_window", 3.0);

    const CorpusManifest manifest = CorpusManifest::load(kv.get("features.manifest"));
    manifest.save(c.path(kManifest));
    if (kv.contains("features.trials")) write_trials(c.path(kTrials), read_trials(kv.get("features.trials")));

    std::map<std::string, std::string> wavs;
    std::ifstream scp(kv.get("features.wav_scp"));
    require<IoError>(scp.good(), "cannot open wav list ", kv.get("features.wav_scp"));
    std::string id, wav;
    while (scp >> id >> wav) wavs[id] = wav;

    std::vector<std::string> ids;
    for (const auto& u : manifest.utterances) {
      require<IoError>(wavs.contains(u.id), "wav list has no entry for utterance '", u.id, "'");
      ids.push_back(u.id);
    }
    std::vector<FeatureMatrix> feats(ids.size());
    parallel_for(ids.size(), c.threads, [&](std::size_t i) {
      const FeatureMatrix raw = compute_mfcc(read_wav(wavs.at(ids[i])), mfcc);
      FeatureMatrix f = use_cmn ? sliding_cmn(raw, cmn_window) : raw;
      if (use_vad) {
        const auto keep = energy_vad_mask(raw, vad);
        std::size_t n = 0;
        for (std::size_t t = 0; t < keep.size(); ++t) {
          if (keep[t]) f.frames.row(static_cast<Eigen::Index>(n++)) = f.frames.row(static_cast<Eigen::Index>(t));
        }
        require<NoSpeechError>(n > 0, "utterance '", ids[i], "' has no speech frames");
        f.frames.conservativeResize(static_cast<Eigen::Index>(n), Eigen::NoChange);
      }
      feats[i] = std::move(f);
    });
    write_feature_archive(c.path(kFeats), ids, feats);
    log << "  " << ids.size() << " utterances from wav files\n";
    return;
  }

  const FeatureArchive raw = read_feature_archive(need(c, kRawFeats, "gen-corpus"));
  const bool use_cmn = kv.get_bool("features.cmn", false);
  const double cmn_window = kv.get_double("features.cmn_window", 3.0);
  std::vector<FeatureMatrix> feats(raw.features.size());
  parallel_for(feats.size(), c.threads, [&](std::size_t i) {
    feats[i] = use_cmn ? sliding_cmn(raw.features[i], cmn_window) : raw.features[i];
  });
  write_feature_archive(c.path(kFeats), raw.ids, feats);
  log << "  " << feats.size() << " utterances\n";
}

void stage_train_ubm(const PipelineConfig& c, std::ostream& log) {
  const KeyValueConfig& kv = c.values;
  const CorpusManifest manifest = CorpusManifest::load(need(c, kManifest, "gen-corpus"));
  const FeatureArchive feats = read_feature_archive(need(c, kFeats, "features"));
  std::vector<FeatureMatrix> data;
  for (const auto* u : ubm_training_set(manifest)) data.push_back(feats.at(u->id));
  UbmTrainOptions o;
  o.num_components = kv.get_size("ubm.num_components", desk(c) ? 64 : 512);
  o.iterations = kv.get_size("ubm.iterations", desk(c) ? 10 : 20);
  o.variance_floor_scale = kv.get_double("ubm.variance_floor_scale", o.variance_floor_scale);
  o.max_seed_frames = kv.get_size("ubm.max_seed_frames", o.max_seed_frames);
  o.seed = stage_seed(c, kSeedUbm);
  o.threads = c.threads;
  const UbmTrainResult r = train_ubm(data, o);
  Archive a;
  r.gmm.save(a);
  a.save(c.path(kUbm));
  log << "  " << o.num_components << " components, log-likelihood " << r.log_likelihood.back() << '\n';
}

void stage_bw_stats(const PipelineConfig& c, std::ostream& log) {
  const std::string norm = c.values.get("bw.normalization", "frame_count");
  require<ConfigError>(norm == "frame_count" || norm == "occupancy", "bw.normalization must be frame_count or occupancy, got '", norm, "'");
  const CorpusManifest manifest = CorpusManifest::load(need(c, kManifest, "gen-corpus"));
  const FeatureArchive feats = read_feature_archive(need(c, kFeats, "features"));
  const DiagGmm ubm = DiagGmm::load(Archive::load(need(c, kUbm, "train-ubm")));
  const auto& utts = manifest.utterances;
  std::vector<BwStats> stats(utts.size());
  parallel_for(utts.size(), c.threads, [&](std::size_t i) {
    stats[i] = accumulate_bw_stats(ubm, feats.at(utts[i].id),
                                   norm == "occupancy" ? StatsNormalization::kOccupancy : StatsNormalization::kFrameCount);
  });
  Archive a;
  for (std::size_t i = 0; i < utts.size(); ++i) stats[i].save(a, utts[i].id);
  a.save(c.path(kStats));
  log << "  " << utts.size() << " utterances\n";
}

void stage_train_tv(const PipelineConfig& c, std::ostream& log) {
  const KeyValueConfig& kv = c.values;
  const CorpusManifest manifest = CorpusManifest::load(need(c, kManifest, "gen-corpus"));
  const DiagGmm ubm = DiagGmm::load(Archive::load(need(c, kUbm, "train-ubm")));
  const auto all = load_stats(need(c, kStats, "bw-stats"), manifest);
  std::vector<BwStats> data;
  for (const auto& u : manifest.utterances) {
    if (u.split == Split::kTrain || u.split == Split::kUnlabeled) data.push_back(all.at(u.id));
  }
  require(!data.empty(), "no training or unlabeled utterances for total variability training");
  TvTrainOptions o;
  o.rank = kv.get_size("tv.rank", desk(c) ? 100 : 400);
  o.iterations = kv.get_size("tv.iterations", desk(c) ? 5 : 10);
  o.init_scale = kv.get_double("tv.init_scale", o.init_scale);
  o.seed = stage_seed(c, kSeedTv);
  o.threads = c.threads;
  const TvTrainResult r = train_total_variability(ubm, data, o);
  Archive a;
  r.model.save(a);
  a.save(c.path(kTv));
  log << "  rank " << o.rank << ", objective " << r.objective.back() << '\n';
}

void stage_extract_ivec(const PipelineConfig& c, std::ostream& log) {
  const CorpusManifest manifest = CorpusManifest::load(need(c, kManifest, "gen-corpus"));
  const DiagGmm ubm = DiagGmm::load(Archive::load(need(c, kUbm, "train-ubm")));
  const TvModel tv = TvModel::load(Archive::load(need(c, kTv, "train-tv")));
  const auto stats = load_stats(need(c, kStats, "bw-stats"), manifest);
  const IvectorExtractor extractor(tv, ubm);
  const auto& utts = manifest.utterances;
  std::vector<std::string> ids;
  for (const auto& u : utts) ids.push_back(u.id);
  std::vector<Vector> out(utts.size());
  parallel_for(utts.size(), c.threads, [&](std::size_t i) { out[i] = extractor.extract(stats.at(utts[i].id)); });
  save_embeddings(c.path(kIvectors), ids, out);
  log << "  " << ids.size() << " i-vectors of dimension " << tv.rank() << '\n';
}

struct SideInputs {
  std::map<std::string, BwStats, std::less<>> stats;
  Embeddings ivectors;
};

SideInputs load_side_inputs(const PipelineConfig& c, const EmbedderConfig& model, const CorpusManifest& manifest) {
  SideInputs s;
  if (model.pooling.variant == PoolingVariant::kBaumWelchAttention) s.stats = load_stats(need(c, kStats, "bw-stats"), manifest);
  if (model.pooling.variant == PoolingVariant::kIvectorAttention) s.ivectors = load_embeddings(need(c, kIvectors, "extract-ivec"));
  return s;
}

void stage_train_embedder(const PipelineConfig& c, std::ostream& log) {
  require(c.uses_embedder(), "system 'i-vector' has no embedder to train");
  const KeyValueConfig& kv = c.values;
  const CorpusManifest manifest = CorpusManifest::load(need(c, kManifest, "gen-corpus"));
  const FeatureArchive feats = read_feature_archive(need(c, kFeats, "features"));
  const auto speakers = speaker_index(manifest);
  require(speakers.size() >= 2, "embedder training needs at least two training speakers, got ", speakers.size());

  KeyValueConfig model_kv;
  model_kv.set("preset", c.system);
  model_kv.set("scale", desk(c) ? "desk" : "paper");
  for (const auto& key : kv.keys()) {
    if (key.starts_with("model.")) model_kv.set(key.substr(6), kv.get(key));
  }
  const auto train_utts = manifest.in_split(Split::kTrain);
  require(!train_utts.empty(), "no training utterances");
  const std::size_t dim = feats.at(train_utts.front()->id).dim();
  model_kv.set("input_dim", std::to_string(dim));
  model_kv.set("pooling.stats_dim", std::to_string(dim));
  model_kv.set("num_speakers", std::to_string(speakers.size()));
  model_kv.set("seed", std::to_string(stage_seed(c, kSeedModel)));
  if (c.uses_ubm()) {
    const DiagGmm ubm = DiagGmm::load(Archive::load(need(c, kUbm, "train-ubm")));
    model_kv.set("pooling.num_components", std::to_string(ubm.num_components()));
  }
  if (c.uses_ivectors()) {
    const TvModel tv = TvModel::load(Archive::load(need(c, kTv, "train-tv")));
    model_kv.set("pooling.ivector_dim", std::to_string(tv.rank()));
  }
  EmbedderModel model(embedder_config_from(model_kv));
  const SideInputs side = load_side_inputs(c, model.config(), manifest);

  std::vector<TrainingUtterance> data;
  for (const auto* u : train_utts) {
    TrainingUtterance t;
    t.id = u->id;
    t.speaker = speakers.at(u->speaker);
    t.features = &feats.at(u->id);
    if (!side.stats.empty()) t.stats = &side.stats.at(u->id);
    if (!side.ivectors.ids.empty()) t.ivector = &side.ivectors.at(u->id, c.path(kIvectors));
    data.push_back(t);
  }

  TrainerOptions o;
  o.epochs = kv.get_size("train.epochs", desk(c) ? 20 : 50);
  o.chunk_frames = kv.get_size("train.chunk_frames", desk(c) ? 200 : 1000);
  o.batch_size = kv.get_size("train.batch_size", o.batch_size);
  o.learning_rate = kv.get_double("train.learning_rate", o.learning_rate);
  o.weight_decay = kv.get_double("train.weight_decay", o.weight_decay);
  o.validation_fraction = kv.get_double("train.validation_fraction", o.validation_fraction);
  o.plateau_patience = kv.get_size("train.plateau_patience", o.plateau_patience);
  o.plateau_factor = kv.get_double("train.plateau_factor", o.plateau_factor);
  o.seed = stage_seed(c, kSeedTrainer);
  o.on_epoch = [&log](std::size_t epoch, double train, double val, double lr) {
    log << "  epoch " << epoch << " loss " << train << " validation " << val << " lr " << lr << '\n';
  };
  train_embedder(model, data, o);
  model.save(c.path(kEmbedder));
}

void stage_extract_xvec(const PipelineConfig& c, std::ostream& log) {
  require(c.uses_embedder(), "system 'i-vector' has no embedder; use extract-ivec");
  const CorpusManifest manifest = CorpusManifest::load(need(c, kManifest, "gen-corpus"));
  const FeatureArchive feats = read_feature_archive(need(c, kFeats, "features"));
  const EmbedderModel model = EmbedderModel::load(need(c, kEmbedder, "train-embedder"));
  const SideInputs side = load_side_inputs(c, model.config(), manifest);
  const auto& utts = manifest.utterances;
  std::vector<std::string> ids;
  for (const auto& u : utts) ids.push_back(u.id);
  std::vector<Vector> out(utts.size());
  parallel_for(utts.size(), c.threads, [&](std::size_t i) {
    const BwStats* stats = side.stats.empty() ? nullptr : &side.stats.at(ids[i]);
    const Vector* ivec = side.ivectors.ids.empty() ? nullptr : &side.ivectors.at(ids[i], c.path(kIvectors));
    out[i] = model.extract_embedding(feats.at(ids[i]), stats, ivec);
  });
  save_embeddings(c.path(kXvectors), ids, out);
  log << "  " << ids.size() << " embeddings of dimension " << model.config().embedding_dim() << '\n';
}

Embeddings system_embeddings(const PipelineConfig& c) {
  return c.uses_embedder() ? load_embeddings(need(c, kXvectors, "extract-xvec"))
                           : load_embeddings(need(c, kIvectors, "extract-ivec"));
}

RowMatrix stack(const std::vector<const Vector*>& rows) {
  RowMatrix m(static_cast<Eigen::Index>(rows.size()), rows.empty() ? 0 : rows.front()->size());
  for (std::size_t i = 0; i < rows.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = rows[i]->transpose();
  return m;
}

void stage_train_backend(const PipelineConfig& c, std::ostream& log) {
  const KeyValueConfig& kv = c.values;
  const CorpusManifest manifest = CorpusManifest::load(need(c, kManifest, "gen-corpus"));
  const Embeddings emb = system_embeddings(c);
  const auto source = c.path(c.uses_embedder() ? kXvectors : kIvectors);
  const auto speakers = speaker_index(manifest);
  std::vector<const Vector*> train, unlabeled;
  std::vector<std::size_t> labels;
  for (const auto* u : manifest.in_split(Split::kTrain)) {
    train.push_back(&emb.at(u->id, source));
    labels.push_back(speakers.at(u->speaker));
  }
  for (const auto* u : manifest.in_split(Split::kUnlabeled)) unlabeled.push_back(&emb.at(u->id, source));
  if (unlabeled.empty()) {
    warn("no unlabeled utterances; centering and adapting on the training split");
    unlabeled = train;
  }
  BackendOptions o;
  o.lda_dim = kv.get_size("backend.lda_dim", o.lda_dim);
  o.plda_iterations = kv.get_size("backend.plda_iterations", o.plda_iterations);
  o.adapt_alpha = kv.get_double("backend.adapt_alpha", o.adapt_alpha);
  o.within_share = kv.get_double("backend.within_share", o.within_share);
  const Backend backend = fit_backend(stack(train), labels, stack(unlabeled), o);
  Archive a;
  backend.save(a);
  a.save(c.path(kBackend));
  log << "  LDA " << backend.lda.input_dim() << " -> " << backend.lda.output_dim() << '\n';
}

void stage_score(const PipelineConfig& c, std::ostream& log) {
  const TrialSet trials = read_trials(need(c, kTrials, "gen-corpus"));
  const Backend backend = Backend::load(Archive::load(need(c, kBackend, "train-backend")));
  const Embeddings emb = system_embeddings(c);
  const auto source = c.path(c.uses_embedder() ? kXvectors : kIvectors);
  std::map<std::string, Vector, std::less<>> processed;
  for (const auto& t : trials) {
    for (const std::string* id : {&t.enroll, &t.test}) {
      if (!processed.contains(*id)) processed.emplace(*id, backend.transform(emb.at(*id, source)));
    }
  }
  const PldaScorer scorer(backend.plda);
  ScoreSet scores;
  scores.trials = trials;
  scores.scores.resize(trials.size());
  parallel_for(trials.size(), c.threads, [&](std::size_t i) {
    scores.scores[i] = scorer.score(processed.at(trials[i].enroll), processed.at(trials[i].test));
  });
  write_scores(c.path(kScores), scores);
  log << "  " << trials.size() << " trials scored\n";
}

void stage_evaluate(const PipelineConfig& c, std::ostream& out) {
  const KeyValueConfig& kv = c.values;
  const TrialSet trials = read_trials(need(c, kTrials, "gen-corpus"));
  const ScoreSet scores = read_scores(need(c, kScores, "score"), trials);
  DcfOptions dcf;
  dcf.p_targets = parse_doubles(kv, "dcf.p_target", dcf.p_targets);
  dcf.c_miss = kv.get_double("dcf.c_miss", dcf.c_miss);
  dcf.c_fa = kv.get_double("dcf.c_fa", dcf.c_fa);
  const std::string report = evaluate_scores(scores, dcf).to_text();
  std::ofstream file(c.path(kMetrics));
  require<IoError>(file.good(), "cannot write ", c.path(kMetrics).string());
  file << report;
  out << report;
}

}  // namespace

PipelineConfig PipelineConfig::from(const KeyValueConfig& values, std::optional<std::filesystem::path> workdir,
                                    std::optional<std::uint64_t> seed, std::optional<std::size_t> threads) {
  values.require_known(kKnownKeys);
  PipelineConfig c;
  c.values = values;
  c.workdir = workdir ? *workdir : std::filesystem::path(values.get("workdir", "work"));
  c.system = values.get("system", "baseline");
  c.seed = seed ? *seed : values.get_u64("seed", 0);
  c.threads = threads ? *threads : values.get_size("threads", 1);
  require<ConfigError>(c.threads >= 1, "threads must be at least 1");
  const std::string scale = values.get("scale", "desk");
  require<ConfigError>(scale == "desk" || scale == "paper", "unknown scale '", scale, "' (expected desk or paper)");
  c.scale = scale == "desk" ? ModelScale::kDesk : ModelScale::kPaper;
  const auto presets = embedder_presets();
  if (c.system != "i-vector" && std::find(presets.begin(), presets.end(), c.system) == presets.end()) {
    std::string known = "i-vector";
    for (const auto& p : presets) known += ", " + p;
    fail<ConfigError>("unknown system preset '", c.system, "' (known: ", known, ")");
  }
  return c;
}

bool PipelineConfig::uses_ubm() const {
  if (!uses_embedder()) return true;
  const auto pooling = make_embedder_config(system).pooling.variant;
  return pooling == PoolingVariant::kBaumWelchAttention || pooling == PoolingVariant::kIvectorAttention;
}

bool PipelineConfig::uses_ivectors() const {
  return !uses_embedder() || make_embedder_config(system).pooling.variant == PoolingVariant::kIvectorAttention;
}

const std::vector<std::string>& pipeline_stages() {
  static const std::vector<std::string> stages = {
      "gen-corpus",     "features",    "train-ubm",     "bw-stats", "train-tv", "extract-ivec",
      "train-embedder", "extract-xvec", "train-backend", "score",    "evaluate",
  };
  return stages;
}

std::vector<std::string> planned_stages(const PipelineConfig& c) {
  std::vector<std::string> plan;
  if (!c.values.contains("features.wav_scp")) plan.push_back("gen-corpus");
  plan.push_back("features");
  if (c.uses_ubm()) {
    plan.push_back("train-ubm");
    plan.push_back("bw-stats");
  }
  if (c.uses_ivectors()) {
    plan.push_back("train-tv");
    plan.push_back("extract-ivec");
  }
  if (c.uses_embedder()) {
    plan.push_back("train-embedder");
    plan.push_back("extract-xvec");
  }
  plan.insert(plan.end(), {"train-backend", "score", "evaluate"});
  return plan;
}

void run_stage(std::string_view stage, const PipelineConfig& c, std::ostream& out, std::ostream& log) {
  if (stage == "run-all") {
    for (const auto& s : planned_stages(c)) run_stage(s, c, out, log);
    return;
  }
  std::filesystem::create_directories(c.workdir);
  const auto start = std::chrono::steady_clock::now();
  log << "[" << stage << "]\n";
  if (stage == "gen-corpus") stage_gen_corpus(c, log);
  else if (stage == "features") stage_features(c, log);
  else if (stage == "train-ubm") stage_train_ubm(c, log);
  else if (stage == "bw-stats") stage_bw_stats(c, log);
  else if (stage == "train-tv") stage_train_tv(c, log);
  else if (stage == "extract-ivec") stage_extract_ivec(c, log);
  else if (stage == "train-embedder") stage_train_embedder(c, log);
  else if (stage == "extract-xvec") stage_extract_xvec(c, log);
  else if (stage == "train-backend") stage_train_backend(c, log);
  else if (stage == "score") stage_score(c, log);
  else if (stage == "evaluate") stage_evaluate(c, out);
  else fail<ConfigError>("unknown stage '", stage, "'");
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  log << "  done in " << seconds << " s\n";
}

}  // namespace xvf
