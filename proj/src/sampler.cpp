#include <algorithm>
#include <limits>
#include <set>

#include "fsner/data.hpp"
#include "fsner/error.hpp"
#include "fsner/random.hpp"
#include "fsner/spans.hpp"

namespace fsner {

namespace {

using Counts = std::map<std::string, std::size_t>;

Counts mention_counts(const Sentence& s) {
  Counts c;
  for (const auto& span : extract_spans(s.tags)) ++c[span.cls];
  return c;
}

}  // namespace

SupportSample greedy_sample_support(std::span<const Sentence> sentences, const LabelSet& labels,
                                    std::size_t n_way, std::size_t k_shot, std::uint64_t seed,
                                    bool strict_k) {
  if (n_way == 0 || k_shot == 0) throw UsageError("sampler needs N >= 1 and K >= 1");
  const auto& pool = labels.entity_classes();
  if (pool.size() < n_way) {
    throw UsageError("sampler asked for " + std::to_string(n_way) + " classes but label set has " +
                     std::to_string(pool.size()));
  }

  Rng rng(derive_seed(seed, "sampler"));
  std::vector<std::string> classes = pool;
  if (classes.size() > n_way) {
    rng.shuffle(classes);
    classes.resize(n_way);
    std::sort(classes.begin(), classes.end());
  }
  const std::set<std::string> chosen(classes.begin(), classes.end());
  const std::size_t upper = strict_k ? k_shot : 2 * k_shot;

  // Only sentences whose entities all belong to the sampled classes.
  std::vector<std::size_t> order;
  std::vector<Counts> counts_of(sentences.size());
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    counts_of[i] = mention_counts(sentences[i]);
    if (counts_of[i].empty()) continue;
    bool ok = std::all_of(counts_of[i].begin(), counts_of[i].end(),
                          [&](const auto& kv) { return chosen.count(kv.first) > 0; });
    if (ok) order.push_back(i);
  }
  rng.shuffle(order);

  SupportSample out;
  out.classes = classes;
  for (const auto& c : classes) out.counts[c] = 0;
  std::vector<bool> used(sentences.size(), false);

  auto satisfied = [&] {
    return std::all_of(out.counts.begin(), out.counts.end(), [&](const auto& kv) { return kv.second >= k_shot; });
  };
  auto take = [&](std::size_t i) {
    used[i] = true;
    out.indices.push_back(i);
    out.sentences.push_back(sentences[i]);
    for (const auto& [cls, n] : counts_of[i]) out.counts[cls] += n;
  };

  for (std::size_t i : order) {
    if (satisfied()) break;
    const auto& c = counts_of[i];
    bool helps = false, fits = true;
    for (const auto& [cls, n] : c) {
      helps = helps || out.counts[cls] < k_shot;
      fits = fits && out.counts[cls] + n <= upper;
    }
    if (helps && fits) take(i);
  }

  // Relaxed pass: for each class still short, add the unused sentence that
  // overshoots the upper bound the least.
  for (const auto& cls : classes) {
    while (out.counts[cls] < k_shot) {
      std::size_t best = std::numeric_limits<std::size_t>::max();
      std::size_t best_over = std::numeric_limits<std::size_t>::max();
      for (std::size_t i : order) {
        if (used[i] || !counts_of[i].count(cls)) continue;
        std::size_t over = 0;
        for (const auto& [c, n] : counts_of[i]) {
          const std::size_t after = out.counts[c] + n;
          if (after > upper) over += after - upper;
        }
        if (over < best_over) {
          best_over = over;
          best = i;
        }
      }
      if (best == std::numeric_limits<std::size_t>::max()) {
        throw DataError("sampler cannot reach " + std::to_string(k_shot) + " mentions of class '" + cls + "'");
      }
      take(best);
    }
  }

  out.overshoot = std::any_of(out.counts.begin(), out.counts.end(), [&](const auto& kv) { return kv.second > upper; });
  return out;
}

}  // namespace fsner
