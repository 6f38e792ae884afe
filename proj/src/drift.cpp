#include "kvlab/drift.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "kvlab/util.hpp"

namespace kvlab {

std::vector<WindowBounds> sliding_windows(int n_tokens, int window, int stride) {
  if (window < 1 || stride < 1) {
    throw std::invalid_argument("sliding_windows: window and stride must be >= 1");
  }
  std::vector<WindowBounds> out;
  if (n_tokens < window) {
    return out;
  }
  for (int start = 0; start + window <= n_tokens; start += stride) {
    out.push_back({start, start + window});
  }
  return out;
}

std::vector<double> embed_window(std::span<const int> tokens, const Tensor2D& tok_embed) {
  if (tokens.empty()) {
    throw std::invalid_argument("embed_window: empty window");
  }
  std::vector<double> mean(static_cast<size_t>(tok_embed.cols), 0.0);
  for (int id : tokens) {
    if (id < 0 || id >= tok_embed.rows) {
      throw std::out_of_range("embed_window: token id " + std::to_string(id) + " outside embedding table");
    }
    auto row = tok_embed.row(id);
    for (size_t j = 0; j < mean.size(); ++j) {
      mean[j] += row[j];
    }
  }
  double inv = 1.0 / static_cast<double>(tokens.size());
  for (double& v : mean) v *= inv;
  return mean;
}

std::vector<double> topic_centroid(const std::vector<std::vector<double>>& window_embeddings) {
  if (window_embeddings.empty()) {
    throw std::invalid_argument("topic_centroid: no windows");
  }
  std::vector<double> mean(window_embeddings[0].size(), 0.0);
  for (const auto& e : window_embeddings) {
    if (e.size() != mean.size()) {
      throw std::invalid_argument("topic_centroid: inconsistent embedding sizes");
    }
    for (size_t j = 0; j < mean.size(); ++j) {
      mean[j] += e[j];
    }
  }
  double inv = 1.0 / static_cast<double>(window_embeddings.size());
  for (double& v : mean) v *= inv;
  return mean;
}

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("cosine: size mismatch");
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) {
    throw std::invalid_argument("cosine: zero vector");
  }
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

namespace {

// Cyclic Jacobi eigendecomposition of a symmetric matrix. Deterministic sweep
// order; good enough for the small covariance matrices used here.
void jacobi_eigen(Tensor2D a, std::vector<double>& evals, Tensor2D& evecs) {
  int n = a.rows;
  evecs = Tensor2D(n, n);
  for (int i = 0; i < n; ++i) evecs.at(i, i) = 1.0;

  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < n; ++p) {
      for (int q = p + 1; q < n; ++q) {
        off += a.at(p, q) * a.at(p, q);
      }
    }
    if (off < 1e-24) break;
    for (int p = 0; p < n; ++p) {
      for (int q = p + 1; q < n; ++q) {
        double apq = a.at(p, q);
        if (std::abs(apq) < 1e-30) continue;
        double app = a.at(p, p);
        double aqq = a.at(q, q);
        double theta = (aqq - app) / (2.0 * apq);
        double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0);
        double s = t * c;
        for (int k = 0; k < n; ++k) {
          double akp = a.at(k, p);
          double akq = a.at(k, q);
          a.at(k, p) = c * akp - s * akq;
          a.at(k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          double apk = a.at(p, k);
          double aqk = a.at(q, k);
          a.at(p, k) = c * apk - s * aqk;
          a.at(q, k) = s * apk + c * aqk;
        }
        for (int k = 0; k < n; ++k) {
          double vkp = evecs.at(k, p);
          double vkq = evecs.at(k, q);
          evecs.at(k, p) = c * vkp - s * vkq;
          evecs.at(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  evals.resize(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    evals[static_cast<size_t>(i)] = a.at(i, i);
  }
}

}  // namespace

PcaResult pca_project(const std::vector<std::vector<double>>& embeddings) {
  if (embeddings.size() < 2) {
    throw std::invalid_argument("pca_project: need at least 2 points");
  }
  int n = static_cast<int>(embeddings.size());
  int d = static_cast<int>(embeddings[0].size());
  for (const auto& e : embeddings) {
    if (static_cast<int>(e.size()) != d) {
      throw std::invalid_argument("pca_project: inconsistent dimensions");
    }
  }

  std::vector<double> mean(static_cast<size_t>(d), 0.0);
  for (const auto& e : embeddings) {
    for (int j = 0; j < d; ++j) mean[static_cast<size_t>(j)] += e[static_cast<size_t>(j)];
  }
  for (double& v : mean) v /= n;

  Tensor2D centered(n, d);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) {
      centered.at(i, j) = embeddings[static_cast<size_t>(i)][static_cast<size_t>(j)] - mean[static_cast<size_t>(j)];
    }
  }
  Tensor2D cov = matmul_tn(centered, centered);
  for (double& v : cov.data) v /= (n - 1);

  std::vector<double> evals;
  Tensor2D evecs;
  jacobi_eigen(cov, evals, evecs);

  std::vector<int> order(static_cast<size_t>(d));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int x, int y) { return evals[static_cast<size_t>(x)] > evals[static_cast<size_t>(y)]; });

  PcaResult res;
  res.var_total = 0.0;
  for (double v : evals) res.var_total += std::max(v, 0.0);
  double tol = 1e-12 * std::max(res.var_total, 1e-300);

  int usable = 0;
  for (int k = 0; k < std::min(2, d); ++k) {
    if (evals[static_cast<size_t>(order[static_cast<size_t>(k)])] > tol) ++usable;
  }
  res.axes = usable;
  res.rank_deficient = usable < 2;

  std::vector<std::vector<double>> axes;
  for (int k = 0; k < usable; ++k) {
    int col = order[static_cast<size_t>(k)];
    std::vector<double> v(static_cast<size_t>(d));
    for (int i = 0; i < d; ++i) v[static_cast<size_t>(i)] = evecs.at(i, col);
    // sign convention: largest-magnitude component is positive
    int arg = 0;
    for (int i = 1; i < d; ++i) {
      if (std::abs(v[static_cast<size_t>(i)]) > std::abs(v[static_cast<size_t>(arg)])) arg = i;
    }
    if (v[static_cast<size_t>(arg)] < 0.0) {
      for (double& x : v) x = -x;
    }
    axes.push_back(std::move(v));
    res.var_captured += evals[static_cast<size_t>(col)];
  }

  res.coords.assign(static_cast<size_t>(n), {0.0, 0.0});
  for (int i = 0; i < n; ++i) {
    for (size_t k = 0; k < axes.size(); ++k) {
      double dot = 0.0;
      for (int j = 0; j < d; ++j) {
        dot += centered.at(i, j) * axes[k][static_cast<size_t>(j)];
      }
      res.coords[static_cast<size_t>(i)][k] = dot;
    }
  }
  return res;
}

double repetition_ratio(std::span<const int> tokens, int n) {
  if (n < 1) {
    throw std::invalid_argument("repetition_ratio: n must be >= 1");
  }
  int total = static_cast<int>(tokens.size()) - n + 1;
  if (total <= 0) {
    return 0.0;
  }
  std::set<std::vector<int>> seen;
  int dups = 0;
  for (int i = 0; i < total; ++i) {
    std::vector<int> gram(tokens.begin() + i, tokens.begin() + i + n);
    if (!seen.insert(std::move(gram)).second) {
      ++dups;
    }
  }
  return static_cast<double>(dups) / static_cast<double>(total);
}

std::string outcome_name(Outcome o) {
  switch (o) {
    case Outcome::NoDeviation: return "no_deviation";
    case Outcome::ImmediatePersistent: return "immediate_persistent";
    case Outcome::PartialRecovery: return "partial_recovery";
    case Outcome::Delayed: return "delayed";
    case Outcome::Collapse: return "collapse";
  }
  return "unknown";
}

OutcomeRecord classify_outcome(const DriftSeries& series, std::span<const int> output_tokens,
                               bool attack_is_topic_b, const Thresholds& th) {
  if (!series.swap_step.has_value()) {
    throw std::invalid_argument("classify_outcome: series has no swap step");
  }
  if (series.windows.empty()) {
    throw std::invalid_argument("classify_outcome: empty series");
  }
  OutcomeRecord rec;
  rec.thresholds = th;

  int swap = *series.swap_step;
  std::span<const int> post =
      swap < static_cast<int>(output_tokens.size()) ? output_tokens.subspan(static_cast<size_t>(swap))
                                                    : std::span<const int>{};
  rec.post_swap_repetition =
      static_cast<int>(post.size()) >= th.repetition_ngram ? repetition_ratio(post, th.repetition_ngram) : 0.0;
  if (rec.post_swap_repetition > th.collapse_repetition) {
    rec.label = Outcome::Collapse;
    return rec;
  }

  int n_win = static_cast<int>(series.windows.size());
  int first_post = -1;
  for (int j = 0; j < n_win; ++j) {
    if (series.windows[static_cast<size_t>(j)].start >= swap) {
      first_post = j;
      break;
    }
  }
  if (first_post < 0) {
    rec.label = Outcome::NoDeviation;
    return rec;
  }

  auto attack_score = [&](int j) {
    const DriftWindow& w = series.windows[static_cast<size_t>(j)];
    return attack_is_topic_b ? w.lda_b : w.lda_a;
  };
  auto original_score = [&](int j) {
    const DriftWindow& w = series.windows[static_cast<size_t>(j)];
    return attack_is_topic_b ? w.lda_a : w.lda_b;
  };
  auto sustained = [&](int j, auto&& score) {
    if (j + th.sustain_windows > n_win) return false;
    for (int k = j; k < j + th.sustain_windows; ++k) {
      if (score(k) <= th.hijack_score) return false;
    }
    return true;
  };

  int onset = -1;
  for (int j = first_post; j < n_win; ++j) {
    if (sustained(j, attack_score)) {
      onset = j;
      break;
    }
  }
  if (onset < 0) {
    rec.label = Outcome::NoDeviation;
    return rec;
  }
  rec.onset_window = onset;

  bool recovered = false;
  for (int j = onset + 1; j < n_win; ++j) {
    if (sustained(j, original_score)) {
      recovered = true;
      break;
    }
  }
  if (recovered) {
    rec.label = Outcome::PartialRecovery;
  } else if (onset - first_post < th.immediate_window_limit) {
    rec.label = Outcome::ImmediatePersistent;
  } else {
    rec.label = Outcome::Delayed;
  }
  return rec;
}

DriftAnalyzer::DriftAnalyzer(const Tensor2D& tok_embed, const std::vector<std::vector<int>>& docs_a,
                             const std::vector<std::vector<int>>& docs_b, int vocab_size,
                             const AnalyzerConfig& cfg)
    : cfg_(cfg), tok_embed_(&tok_embed) {
  auto stream_windows = [&](const std::vector<std::vector<int>>& docs) {
    std::vector<int> stream;
    for (const auto& d : docs) {
      stream.insert(stream.end(), d.begin(), d.end());
    }
    std::vector<std::vector<double>> embs;
    auto bounds = sliding_windows(static_cast<int>(stream.size()), cfg_.window, cfg_.stride);
    if (bounds.empty() && !stream.empty()) {
      bounds.push_back({0, static_cast<int>(stream.size())});  // short corpus: single whole-stream window
    }
    for (const auto& b : bounds) {
      embs.push_back(embed_window(std::span<const int>(stream).subspan(b.start, b.end - b.start), tok_embed));
    }
    return embs;
  };
  centroid_a_ = topic_centroid(stream_windows(docs_a));
  centroid_b_ = topic_centroid(stream_windows(docs_b));

  std::vector<std::vector<int>> all_docs = docs_a;
  all_docs.insert(all_docs.end(), docs_b.begin(), docs_b.end());
  lda_ = lda_train(all_docs, vocab_size, cfg_.lda_alpha, cfg_.lda_beta, cfg_.lda_iters, cfg_.lda_seed);

  // align trained topics to the corpora: topic "a" is whichever trained topic
  // has more affinity to corpus A documents
  double mean0_a = 0.0, mean0_b = 0.0;
  for (const auto& d : docs_a) {
    mean0_a += lda_infer(lda_, d, 0).a;
  }
  mean0_a /= static_cast<double>(docs_a.size());
  for (const auto& d : docs_b) {
    mean0_b += lda_infer(lda_, d, 0).a;
  }
  mean0_b /= static_cast<double>(docs_b.size());
  topic_a_index_ = mean0_a >= mean0_b ? 0 : 1;
}

DriftSeries DriftAnalyzer::analyze(const std::vector<int>& output_tokens, std::optional<int> swap_step) const {
  DriftSeries series;
  series.window_size = cfg_.window;
  series.stride = cfg_.stride;
  series.swap_step = swap_step;

  auto bounds = sliding_windows(static_cast<int>(output_tokens.size()), cfg_.window, cfg_.stride);
  std::vector<std::vector<double>> embs;
  embs.reserve(bounds.size());
  for (const auto& b : bounds) {
    std::span<const int> win(output_tokens.data() + b.start, static_cast<size_t>(b.end - b.start));
    auto emb = embed_window(win, *tok_embed_);
    DriftWindow w;
    w.start = b.start;
    w.end = b.end;
    w.cos_a = cosine(emb, centroid_a_);
    w.cos_b = cosine(emb, centroid_b_);
    LdaScores scores = lda_infer(lda_, win, topic_a_index_);
    w.lda_a = scores.a;
    w.lda_b = scores.b;
    series.windows.push_back(w);
    embs.push_back(std::move(emb));
  }
  if (embs.size() >= 2) {
    series.pca_coords = pca_project(embs).coords;
  } else {
    series.pca_coords.assign(embs.size(), {0.0, 0.0});
  }
  return series;
}

std::string drift_series_csv(const DriftSeries& series, const std::vector<std::string>& header_comments) {
  std::string out;
  for (const auto& c : header_comments) {
    out += "# " + c + "\n";
  }
  out += "window_start,window_end,cos_A,cos_B,lda_A,lda_B,pca_x,pca_y\n";
  for (size_t i = 0; i < series.windows.size(); ++i) {
    const DriftWindow& w = series.windows[i];
    double px = i < series.pca_coords.size() ? series.pca_coords[i][0] : 0.0;
    double py = i < series.pca_coords.size() ? series.pca_coords[i][1] : 0.0;
    out += std::to_string(w.start) + "," + std::to_string(w.end) + "," + format_double(w.cos_a) + "," +
           format_double(w.cos_b) + "," + format_double(w.lda_a) + "," + format_double(w.lda_b) + "," +
           format_double(px) + "," + format_double(py) + "\n";
  }
  return out;
}

std::string outcome_record_json(const OutcomeRecord& rec) {
  nlohmann::json j;
  j["label"] = outcome_name(rec.label);
  if (rec.onset_window.has_value()) {
    j["onset_window"] = *rec.onset_window;
  } else {
    j["onset_window"] = nullptr;
  }
  j["post_swap_repetition"] = rec.post_swap_repetition;
  j["thresholds"] = {{"collapse_repetition", rec.thresholds.collapse_repetition},
                     {"hijack_score", rec.thresholds.hijack_score},
                     {"sustain_windows", rec.thresholds.sustain_windows},
                     {"immediate_window_limit", rec.thresholds.immediate_window_limit},
                     {"repetition_ngram", rec.thresholds.repetition_ngram}};
  return j.dump(2) + "\n";
}

}  // namespace kvlab
