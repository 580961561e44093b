#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "pflego/errors.hpp"
#include "pflego/matrix.hpp"
#include "pflego/nn.hpp"
#include "pflego/rng.hpp"

namespace pflego {

// One client's share of the federation. Labels in the batches are LOCAL
// head indices; class_ids maps local index j to the global class id.
struct ClientDataset {
  int client_id = 0;
  Batch train;
  Batch test;
  std::vector<int> class_ids;  // ascending, size K_i
  double alpha_i = 0.0;        // N_i / sum_j N_j over the federation

  std::size_t n_train() const { return train.labels.size(); }
};

enum class Personalization { High, Medium, None };

// Degree of personalization: how many of the C classes each client holds.
struct PersonalizationSpec {
  Personalization degree = Personalization::High;
  std::size_t total_classes = 10;

  std::size_t classes_per_client() const {
    switch (degree) {
      case Personalization::High:
        return 2;
      case Personalization::Medium:
        return total_classes / 2;  // floor for odd C
      case Personalization::None:
        return total_classes;
    }
    return total_classes;
  }
};

struct SyntheticSpec {
  std::size_t classes = 10;
  std::size_t input_dim = 10;
  std::size_t samples_per_class = 100;
  double cluster_spread = 0.5;  // sigma
  std::uint64_t seed = 0;
};

// Draws K distinct classes per client, uniformly without replacement, and
// resamples the whole assignment until every class lands on at least one
// client. Bounded retries; per-client marginals stay uniform.
inline std::vector<std::vector<int>> assign_classes(const PersonalizationSpec& spec,
                                                    std::size_t clients,
                                                    std::uint64_t seed) {
  const std::size_t c = spec.total_classes;
  const std::size_t k = spec.classes_per_client();
  if (clients < 1) throw ConfigError("assign_classes: need at least one client");
  if (k > c) throw ConfigError("assign_classes: K exceeds class count");
  if (clients * k < c) {
    throw ConfigError("assign_classes: " + std::to_string(clients) +
                      " clients with K=" + std::to_string(k) +
                      " cannot cover " + std::to_string(c) +
                      " classes; add clients or raise K");
  }

  Rng rng(derive_seed(seed, Stream::ClassAssignment));
  constexpr int kMaxRetries = 1000;
  for (int attempt = 0; attempt < kMaxRetries; ++attempt) {
    std::vector<std::vector<int>> assignment(clients);
    std::vector<bool> covered(c, false);
    std::vector<int> pool(c);
    std::iota(pool.begin(), pool.end(), 0);
    for (std::size_t i = 0; i < clients; ++i) {
      // partial Fisher-Yates: first k entries are a uniform k-subset
      for (std::size_t j = 0; j < k; ++j) {
        std::size_t pick = j + static_cast<std::size_t>(rng.below(c - j));
        std::swap(pool[j], pool[pick]);
      }
      assignment[i].assign(pool.begin(), pool.begin() + static_cast<long>(k));
      std::sort(assignment[i].begin(), assignment[i].end());
      for (int cls : assignment[i]) covered[cls] = true;
    }
    if (std::all_of(covered.begin(), covered.end(), [](bool b) { return b; })) {
      return assignment;
    }
  }
  throw ConfigError("assign_classes: no full-coverage assignment after " +
                    std::to_string(kMaxRetries) +
                    " attempts; add clients or raise K");
}

// Which samples of which class a client received, as indices into the
// per-class sample arrays.
struct ClientShard {
  int client_id = 0;
  std::map<int, std::vector<std::size_t>> samples;  // class id -> indices
};

// Per class: shuffle that class's sample indices, then deal one at a time to
// the clients assigned the class, cycling until exhausted. Shard sizes per
// class among assigned clients differ by at most one.
inline std::vector<ClientShard> round_robin_partition(
    const std::vector<std::size_t>& class_counts,
    const std::vector<std::vector<int>>& assignments, std::uint64_t seed) {
  std::vector<ClientShard> shards(assignments.size());
  for (std::size_t i = 0; i < shards.size(); ++i) {
    shards[i].client_id = static_cast<int>(i);
  }

  for (std::size_t cls = 0; cls < class_counts.size(); ++cls) {
    std::vector<int> takers;
    for (std::size_t i = 0; i < assignments.size(); ++i) {
      const auto& a = assignments[i];
      if (std::find(a.begin(), a.end(), static_cast<int>(cls)) != a.end()) {
        takers.push_back(static_cast<int>(i));
      }
    }
    if (takers.empty()) {
      throw InputError("round_robin_partition: class " + std::to_string(cls) +
                       " has no assigned clients");
    }
    if (class_counts[cls] == 0) {
      throw InputError("round_robin_partition: class " + std::to_string(cls) +
                       " has no samples");
    }

    std::vector<std::size_t> order(class_counts[cls]);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(seed, Stream::PartitionShuffle, cls));
    rng.shuffle(order);

    for (std::size_t j = 0; j < order.size(); ++j) {
      int client = takers[j % takers.size()];
      shards[client].samples[static_cast<int>(cls)].push_back(order[j]);
    }
  }
  return shards;
}

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

// Stratified split of `count` positions: shuffled, then the last
// floor(count * (1 - train_fraction)) go to test. Both sides must be
// non-empty.
inline SplitIndices split_one_class(std::size_t count, double train_fraction,
                                    Rng& rng) {
  const auto n_test = static_cast<std::size_t>(
      std::floor(static_cast<double>(count) * (1.0 - train_fraction)));
  const std::size_t n_train = count - n_test;
  if (n_test == 0 || n_train == 0) {
    throw InputError("train_test_split: class with " + std::to_string(count) +
                     " samples cannot be split " + std::to_string(train_fraction) +
                     "/" + std::to_string(1.0 - train_fraction));
  }
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  SplitIndices split;
  split.train.assign(order.begin(), order.begin() + static_cast<long>(n_train));
  split.test.assign(order.begin() + static_cast<long>(n_train), order.end());
  return split;
}

// Per-class stratified train/test split. `per_class_counts[c]` positions of
// class c are partitioned; deterministic for a seed.
inline std::vector<SplitIndices> train_test_split(
    const std::vector<std::size_t>& per_class_counts, double train_fraction,
    std::uint64_t seed) {
  if (train_fraction <= 0.0 || train_fraction >= 1.0) {
    throw InputError("train_test_split: fraction must be in (0, 1)");
  }
  std::vector<SplitIndices> out;
  out.reserve(per_class_counts.size());
  for (std::size_t cls = 0; cls < per_class_counts.size(); ++cls) {
    Rng rng(derive_seed(seed, Stream::SplitShuffle, cls));
    out.push_back(split_one_class(per_class_counts[cls], train_fraction, rng));
  }
  return out;
}

// Isotropic Gaussian blob per class. Means are drawn uniform in [-1, 1]^D
// and re-drawn until pairwise separated by at least twice the spread, so a
// nearest-mean rule already does well and an MLP can do better.
inline std::vector<Matrix> generate_synthetic(const SyntheticSpec& spec) {
  if (spec.samples_per_class < 2) {
    throw ConfigError("generate_synthetic: need >= 2 samples per class");
  }
  if (spec.classes < 1 || spec.input_dim < 1) {
    throw ConfigError("generate_synthetic: classes and input_dim must be >= 1");
  }

  Rng mean_rng(derive_seed(spec.seed, Stream::SyntheticMeans));
  std::vector<std::vector<double>> means;
  const double min_sep = 2.0 * spec.cluster_spread;
  constexpr int kMeanRetries = 1000;
  for (std::size_t cls = 0; cls < spec.classes; ++cls) {
    bool placed = false;
    for (int attempt = 0; attempt < kMeanRetries && !placed; ++attempt) {
      std::vector<double> candidate(spec.input_dim);
      for (double& x : candidate) x = mean_rng.uniform(-1.0, 1.0);
      placed = true;
      for (const auto& other : means) {
        double d2 = 0.0;
        for (std::size_t j = 0; j < candidate.size(); ++j) {
          const double diff = candidate[j] - other[j];
          d2 += diff * diff;
        }
        if (d2 < min_sep * min_sep) {
          placed = false;
          break;
        }
      }
      if (placed) means.push_back(std::move(candidate));
    }
    if (!placed) {
      throw ConfigError("generate_synthetic: could not separate " +
                        std::to_string(spec.classes) + " class means by " +
                        std::to_string(min_sep) + " in dimension " +
                        std::to_string(spec.input_dim));
    }
  }

  std::vector<Matrix> classes;
  classes.reserve(spec.classes);
  for (std::size_t cls = 0; cls < spec.classes; ++cls) {
    Rng rng(derive_seed(spec.seed, Stream::SyntheticSamples, cls));
    Matrix samples(spec.samples_per_class, spec.input_dim);
    for (std::size_t i = 0; i < spec.samples_per_class; ++i) {
      for (std::size_t j = 0; j < spec.input_dim; ++j) {
        samples(i, j) = means[cls][j] + spec.cluster_spread * rng.normal();
      }
    }
    classes.push_back(std::move(samples));
  }
  return classes;
}

// Full pipeline: assign classes, deal samples round-robin, split each
// client's share per class, and compute the proportionality weights.
inline std::vector<ClientDataset> build_federation(
    const std::vector<Matrix>& class_samples, const PersonalizationSpec& pers,
    std::size_t clients, double train_fraction, std::uint64_t seed) {
  std::vector<std::size_t> counts;
  counts.reserve(class_samples.size());
  for (const auto& m : class_samples) counts.push_back(m.rows());

  const auto assignments = assign_classes(pers, clients, seed);
  const auto shards = round_robin_partition(counts, assignments, seed);

  std::vector<ClientDataset> datasets(clients);
  for (std::size_t i = 0; i < clients; ++i) {
    ClientDataset& ds = datasets[i];
    ds.client_id = static_cast<int>(i);
    for (const auto& [cls, idxs] : shards[i].samples) ds.class_ids.push_back(cls);
    std::sort(ds.class_ids.begin(), ds.class_ids.end());

    std::vector<std::size_t> shard_counts;
    for (int cls : ds.class_ids) shard_counts.push_back(shards[i].samples.at(cls).size());
    const auto splits = train_test_split(
        shard_counts, train_fraction,
        derive_seed(seed, Stream::SplitShuffle, static_cast<std::uint64_t>(i)));

    const std::size_t dim = class_samples.empty() ? 0 : class_samples[0].cols();
    std::size_t n_train = 0, n_test = 0;
    for (const auto& s : splits) {
      n_train += s.train.size();
      n_test += s.test.size();
    }
    ds.train.inputs = Matrix(n_train, dim);
    ds.test.inputs = Matrix(n_test, dim);

    std::size_t tr = 0, te = 0;
    for (std::size_t local = 0; local < ds.class_ids.size(); ++local) {
      const int cls = ds.class_ids[local];
      const auto& idxs = shards[i].samples.at(cls);
      const Matrix& source = class_samples[cls];
      for (std::size_t pos : splits[local].train) {
        auto row = source.row(idxs[pos]);
        std::copy(row.begin(), row.end(), ds.train.inputs.row(tr).begin());
        ds.train.labels.push_back(static_cast<int>(local));
        ++tr;
      }
      for (std::size_t pos : splits[local].test) {
        auto row = source.row(idxs[pos]);
        std::copy(row.begin(), row.end(), ds.test.inputs.row(te).begin());
        ds.test.labels.push_back(static_cast<int>(local));
        ++te;
      }
    }
  }

  std::size_t total = 0;
  for (const auto& ds : datasets) total += ds.n_train();
  if (total == 0) throw InputError("build_federation: no training samples");
  for (auto& ds : datasets) {
    ds.alpha_i = static_cast<double>(ds.n_train()) / static_cast<double>(total);
  }
  return datasets;
}

}  // namespace pflego
