#include "hfmm/partition.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <tuple>

namespace hfmm::part {

namespace {

double comp(const Vec3& v, int axis) {
  return axis == 0 ? v.x : axis == 1 ? v.y : v.z;
}

double& comp(Vec3& v, int axis) {
  return axis == 0 ? v.x : axis == 1 ? v.y : v.z;
}

struct OrbState {
  std::span<const fmm::Body> bodies;
  PartitionPlan& plan;
  std::vector<std::uint32_t>& idx;

  double weight(std::uint32_t i) const { return bodies[i].weight; }

  void split(std::size_t lo, std::size_t hi, Aabb slab, int r0, int r1) {
    const int nr = r1 - r0;
    if (nr == 1) {
      plan.boxes[r0] = slab;
      double w = 0;
      for (std::size_t i = lo; i < hi; ++i) {
        plan.assignment[idx[i]] = std::uint32_t(r0);
        w += weight(idx[i]);
      }
      plan.rank_weight[r0] = w;
      return;
    }

    const int left_ranks = nr / 2;
    double total = 0;
    for (std::size_t i = lo; i < hi; ++i) total += weight(idx[i]);
    const double target = total * double(left_ranks) / double(nr);

    const double ext[3] = {slab.hi.x - slab.lo.x, slab.hi.y - slab.lo.y,
                           slab.hi.z - slab.lo.z};
    int axis = 0;
    if (ext[1] > ext[axis]) axis = 1;
    if (ext[2] > ext[axis]) axis = 2;

    std::sort(idx.begin() + lo, idx.begin() + hi,
              [&](std::uint32_t a, std::uint32_t b) {
                const double ca = comp(bodies[a].position, axis);
                const double cb = comp(bodies[b].position, axis);
                return ca != cb ? ca < cb : a < b;
              });

    // weighted-median cut, but never starve a side of bodies
    const std::size_t n = hi - lo;
    const std::size_t kmin = std::size_t(left_ranks);
    const std::size_t kmax = n - std::size_t(nr - left_ranks);
    double prefix = 0;
    double best = std::numeric_limits<double>::infinity();
    std::size_t cut = kmin;
    for (std::size_t k = 1; k <= kmax; ++k) {
      prefix += weight(idx[lo + k - 1]);
      if (k < kmin) continue;
      const double miss = std::abs(prefix - target);
      if (miss < best) {
        best = miss;
        cut = k;
      }
    }

    const double ca = comp(bodies[idx[lo + cut - 1]].position, axis);
    const double cb = comp(bodies[idx[lo + cut]].position, axis);
    const double plane = (ca + cb) / 2;
    Aabb left = slab, right = slab;
    comp(left.hi, axis) = plane;
    comp(right.lo, axis) = plane;
    split(lo, lo + cut, left, r0, r0 + left_ranks);
    split(lo + cut, hi, right, r0 + left_ranks, r1);
  }
};

} // namespace

double PartitionPlan::imbalance() const {
  if (rank_weight.empty()) return 0;
  double mx = 0, sum = 0;
  for (double w : rank_weight) {
    mx = std::max(mx, w);
    sum += w;
  }
  const double mean = sum / double(rank_weight.size());
  return mean > 0 ? mx / mean : 0;
}

PartitionPlan orb_partition(std::span<const fmm::Body> bodies, int nranks) {
  if (nranks < 1) throw config_error("rank count must be positive");
  if (std::size_t(nranks) > bodies.size())
    throw config_error("more ranks than bodies");

  double total = 0;
  for (const fmm::Body& b : bodies) {
    if (!(b.weight >= 0)) throw config_error("body weight must be finite and non-negative");
    total += b.weight;
  }
  if (!(total > 0)) throw config_error("total body weight must be positive");

  Aabb root{bodies[0].position, bodies[0].position};
  for (const fmm::Body& b : bodies) {
    root.lo.x = std::min(root.lo.x, b.position.x);
    root.lo.y = std::min(root.lo.y, b.position.y);
    root.lo.z = std::min(root.lo.z, b.position.z);
    root.hi.x = std::max(root.hi.x, b.position.x);
    root.hi.y = std::max(root.hi.y, b.position.y);
    root.hi.z = std::max(root.hi.z, b.position.z);
  }

  PartitionPlan plan;
  plan.nranks = nranks;
  plan.boxes.resize(nranks);
  plan.assignment.resize(bodies.size());
  plan.rank_weight.assign(nranks, 0.0);

  std::vector<std::uint32_t> idx(bodies.size());
  for (std::uint32_t i = 0; i < idx.size(); ++i) idx[i] = i;
  OrbState state{bodies, plan, idx};
  state.split(0, bodies.size(), root, 0, nranks);
  return plan;
}

double compute_weight(double local_size, double remote_size, double alpha) {
  if (!(local_size >= 0) || !(remote_size >= 0) || !(alpha >= 0))
    throw config_error("weight inputs must be finite and non-negative");
  return local_size + alpha * remote_size;
}

WeightSample measure_weights(const fmm::Octree& tree,
                             const fmm::TraversalPlan& plan) {
  WeightSample sample;
  sample.local.assign(tree.bodies.size(), 0.0);
  sample.remote.assign(tree.bodies.size(), 0.0);

  for (const fmm::TargetGroup& g : plan.p2p) {
    const fmm::Cell& t = tree.cells[g.target];
    double partners = 0;
    for (std::uint32_t sci : g.sources)
      partners += double(tree.cells[sci].body_count);
    for (std::uint32_t b = t.body_first; b < t.body_first + t.body_count; ++b)
      sample.local[tree.bodies[b].index] += partners;
  }
  for (const fmm::TargetGroup& g : plan.m2l) {
    const fmm::Cell& t = tree.cells[g.target];
    const double pairs = double(g.sources.size());
    for (std::uint32_t b = t.body_first; b < t.body_first + t.body_count; ++b)
      sample.remote[tree.bodies[b].index] += pairs;
  }
  return sample;
}

void apply_weights(std::span<fmm::Body> bodies, const WeightSample& sample,
                   double alpha) {
  if (sample.local.size() != bodies.size() ||
      sample.remote.size() != bodies.size())
    throw config_error("weight sample does not match the body list");
  for (std::size_t i = 0; i < bodies.size(); ++i)
    bodies[i].weight = compute_weight(sample.local[i], sample.remote[i], alpha);
}

double update_alpha(std::span<const AlphaSample> history, double alpha_max) {
  if (history.empty()) throw config_error("alpha history must not be empty");
  if (!(alpha_max > 0)) throw config_error("alpha_max must be positive");

  constexpr double inv_phi = 0.6180339887498948;
  constexpr int budget = 12;
  const double tol = 1e-12 * std::max(1.0, alpha_max);

  std::vector<bool> used(history.size(), false);
  auto take = [&](double a) -> const AlphaSample* {
    for (std::size_t i = 0; i < history.size(); ++i) {
      if (!used[i] && std::abs(history[i].alpha - a) <= tol) {
        used[i] = true;
        return &history[i];
      }
    }
    return nullptr;
  };
  auto best_seen = [&] {
    std::size_t arg = 0;
    for (std::size_t i = 1; i < history.size(); ++i)
      if (history[i].runtime < history[arg].runtime) arg = i;
    return history[arg].alpha; // earliest minimum: a flat curve changes nothing
  };

  double lo = 0, hi = alpha_max;
  double x1 = hi - inv_phi * (hi - lo);
  double x2 = lo + inv_phi * (hi - lo);
  const AlphaSample* s1 = take(x1);
  if (!s1) return x1;
  const AlphaSample* s2 = take(x2);
  if (!s2) return x2;

  for (int probes = 2; probes < budget && hi - lo > 1e-6 * alpha_max;) {
    if (s1->runtime < s2->runtime) {
      hi = x2;
      x2 = x1;
      s2 = s1;
      x1 = hi - inv_phi * (hi - lo);
      s1 = take(x1);
      if (!s1) return x1;
    } else {
      lo = x1;
      x1 = x2;
      s1 = s2;
      x2 = lo + inv_phi * (hi - lo);
      s2 = take(x2);
      if (!s2) return x2;
    }
    ++probes;
  }
  return best_seen();
}

namespace {

// published arities: 4 nodes to a blade, 64 to a chassis, 192 to a cabinet,
// 384 to a local all-to-all group, six local groups to a global tier
constexpr std::uint32_t kGroupNodes = 384;
constexpr std::uint32_t kTierNodes = 2304;

std::uint32_t mapped_node(const DragonflyMap& map, int rank) {
  if (rank < 0 || std::size_t(rank) >= map.node.size())
    throw config_error("rank is not mapped to a node");
  return map.node[rank];
}

} // namespace

DragonflyMap dragonfly_map_compact(int nranks) {
  if (nranks < 0) throw config_error("rank count must not be negative");
  DragonflyMap map;
  map.node.resize(nranks);
  for (int r = 0; r < nranks; ++r) map.node[r] = std::uint32_t(r);
  return map;
}

DragonflyMap dragonfly_map_spread(int nranks, int ranks_per_group) {
  if (nranks < 0) throw config_error("rank count must not be negative");
  if (ranks_per_group < 1 || std::uint32_t(ranks_per_group) > kGroupNodes)
    throw config_error("ranks per group must fit one dragonfly group");
  DragonflyMap map;
  map.node.resize(nranks);
  for (int r = 0; r < nranks; ++r) {
    const std::uint32_t g = std::uint32_t(r) / std::uint32_t(ranks_per_group);
    const std::uint32_t m = std::uint32_t(r) % std::uint32_t(ranks_per_group);
    map.node[r] = g * kGroupNodes + m;
  }
  return map;
}

DragonflyCoord dragonfly_coords(const DragonflyMap& map, int rank) {
  const std::uint32_t n = mapped_node(map, rank);
  return {n / 4, n / 64, n / 192, n / kGroupNodes};
}

int dragonfly_hops(const DragonflyMap& map, int rank_a, int rank_b) {
  const std::uint32_t na = mapped_node(map, rank_a);
  const std::uint32_t nb = mapped_node(map, rank_b);
  if (na == nb) return 0;
  if (na / kGroupNodes == nb / kGroupNodes) return 1;
  if (na / kTierNodes == nb / kTierNodes) return 2;
  return 3;
}

CommGraph build_comm_graph(int nranks, int group_size) {
  if (nranks < 1) throw config_error("rank count must be positive");
  if (group_size < 1) throw config_error("group size must be positive");

  CommGraph graph;
  graph.nranks = nranks;
  graph.group_size = group_size;
  graph.leader.resize(nranks);
  graph.adjacency.assign(nranks, {});

  for (int g0 = 0; g0 < nranks; g0 += group_size) {
    const int g1 = std::min(g0 + group_size, nranks);
    std::vector<int>& members = graph.groups.emplace_back();
    for (int r = g0; r < g1; ++r) {
      members.push_back(r);
      graph.leader[r] = g0;
      for (int o = g0; o < g1; ++o)
        if (o != r) graph.adjacency[r].push_back(o);
    }
  }
  for (const std::vector<int>& ga : graph.groups)
    for (const std::vector<int>& gb : graph.groups)
      if (ga.front() != gb.front())
        graph.adjacency[ga.front()].push_back(gb.front());
  for (std::vector<int>& adj : graph.adjacency) {
    std::sort(adj.begin(), adj.end());
    adj.erase(std::unique(adj.begin(), adj.end()), adj.end());
  }
  return graph;
}

const char* stage_name(Stage s) {
  switch (s) {
    case Stage::neighbor: return "neighbor";
    case Stage::relay1: return "relay1";
    case Stage::relay2: return "relay2";
    case Stage::direct: return "direct";
  }
  return "?";
}

namespace {

void finalize_stats(ExchangeStats& stats, int nranks) {
  stats.sent.assign(nranks, 0);
  stats.received.assign(nranks, 0);
  stats.messages = stats.schedule.size();
  stats.bytes = 0;
  stats.hop_cost = 0;
  for (const MessageRecord& m : stats.schedule) {
    stats.bytes += m.bytes;
    stats.hop_cost += double(m.bytes) * double(m.hops);
    stats.sent[m.src] += m.bytes;
    stats.received[m.dst] += m.bytes;
  }
  std::uint64_t mx = 0, sum = 0;
  for (std::uint64_t v : stats.sent) {
    mx = std::max(mx, v);
    sum += v;
  }
  const double mean = nranks > 0 ? double(sum) / double(nranks) : 0.0;
  stats.imbalance = mean > 0 ? double(mx) / mean : 0.0;
}

void emit_chunked(ExchangeStats& stats, Stage stage, int src, int dst,
                  std::uint64_t bytes, int hops, std::vector<int> payload,
                  std::uint64_t chunk_limit) {
  if (chunk_limit == 0) throw config_error("chunk limit must be positive");
  std::uint64_t left = bytes;
  do {
    const std::uint64_t take = std::min(left, chunk_limit);
    stats.schedule.push_back({stage, src, dst, take, hops, payload});
    left -= take;
  } while (left > 0);
}

} // namespace

ExchangeStats hsdx_exchange(const CommGraph& graph,
                            std::span<const std::uint64_t> payload_bytes,
                            const std::vector<std::vector<int>>& needs,
                            const DragonflyMap& map,
                            const ExchangeConfig& cfg) {
  const int n = graph.nranks;
  if (n < 1) throw config_error("exchange needs at least one rank");
  if (payload_bytes.size() != std::size_t(n) || needs.size() != std::size_t(n))
    throw config_error("payload and need lists must cover every rank");
  if (graph.adjacency.size() != std::size_t(n))
    throw config_error("adjacency does not cover every rank");
  if (map.node.size() < std::size_t(n))
    throw config_error("dragonfly map does not cover every rank");

  for (int u = 0; u < n; ++u) {
    for (int v : graph.adjacency[u]) {
      if (v < 0 || v >= n || v == u)
        throw topology_error("adjacency entry out of range");
      const std::vector<int>& back = graph.adjacency[v];
      if (!std::binary_search(back.begin(), back.end(), u))
        throw topology_error("adjacency is not symmetric");
    }
  }

  // consumers of each payload
  std::vector<std::vector<int>> consumers(n);
  for (int d = 0; d < n; ++d) {
    for (int s : needs[d]) {
      if (s < 0 || s >= n) throw config_error("need entry out of range");
      if (s != d) consumers[s].push_back(d);
    }
  }

  // bundle bytes per (stage, edge): breadth-first tree routes, at most two
  // relays, a payload rides each tree edge once no matter how many
  // destinations sit below it
  std::map<std::tuple<int, int, int>, std::vector<int>> bundles;
  std::vector<int> dist(n), pred(n);
  for (int s = 0; s < n; ++s) {
    if (consumers[s].empty()) continue;
    std::fill(dist.begin(), dist.end(), -1);
    dist[s] = 0;
    std::vector<int> queue{s};
    for (std::size_t q = 0; q < queue.size(); ++q) {
      const int u = queue[q];
      if (dist[u] == 3) continue;
      for (int v : graph.adjacency[u]) {
        if (dist[v] >= 0) continue;
        dist[v] = dist[u] + 1;
        pred[v] = u;
        queue.push_back(v);
      }
    }
    std::vector<bool> on_route(n, false);
    for (int d : consumers[s]) {
      if (dist[d] < 0)
        throw topology_error("a needed payload cannot reach its rank within two relays");
      for (int v = d; v != s; v = pred[v]) {
        if (on_route[v]) break;
        on_route[v] = true;
      }
    }
    for (int v = 0; v < n; ++v)
      if (on_route[v]) bundles[{dist[v] - 1, pred[v], v}].push_back(s);
  }

  ExchangeStats stats;
  for (const auto& [key, srcs] : bundles) {
    const auto [stage, u, v] = key;
    std::uint64_t bytes = 0;
    for (int s : srcs) bytes += payload_bytes[s];
    emit_chunked(stats, Stage(stage), u, v, bytes, dragonfly_hops(map, u, v),
                 srcs, cfg.chunk_limit);
  }
  std::stable_sort(stats.schedule.begin(), stats.schedule.end(),
                   [](const MessageRecord& a, const MessageRecord& b) {
                     return a.stage < b.stage;
                   });
  finalize_stats(stats, n);
  return stats;
}

ExchangeStats hsdx_exchange(const CommGraph& graph,
                            std::span<const std::uint64_t> payload_bytes,
                            const DragonflyMap& map,
                            const ExchangeConfig& cfg) {
  std::vector<std::vector<int>> needs(graph.nranks);
  for (int d = 0; d < graph.nranks; ++d)
    for (int s = 0; s < graph.nranks; ++s)
      if (s != d) needs[d].push_back(s);
  return hsdx_exchange(graph, payload_bytes, needs, map, cfg);
}

ExchangeStats alltoall_baseline(std::span<const std::uint64_t> payload_bytes,
                                const DragonflyMap& map,
                                const ExchangeConfig& cfg) {
  const int n = int(payload_bytes.size());
  if (map.node.size() < std::size_t(n))
    throw config_error("dragonfly map does not cover every rank");

  ExchangeStats stats;
  for (int s = 0; s < n; ++s)
    for (int d = 0; d < n; ++d)
      if (d != s)
        emit_chunked(stats, Stage::direct, s, d, payload_bytes[s],
                     dragonfly_hops(map, s, d), {s}, cfg.chunk_limit);
  finalize_stats(stats, n);
  return stats;
}

void write_exchange_csv(const std::string& path, const ExchangeStats& stats) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot open " + path + " for writing");
  out << "stage,src,dst,bytes,hops\n";
  for (const MessageRecord& m : stats.schedule)
    out << stage_name(m.stage) << ',' << m.src << ',' << m.dst << ','
        << m.bytes << ',' << m.hops << '\n';
  if (!out.good()) throw io_error("failed writing " + path);
}

void write_exchange_json(const std::string& path, const ExchangeStats& stats) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot open " + path + " for writing");
  out << std::setprecision(17);
  out << "{\n";
  out << "  \"ranks\": " << stats.sent.size() << ",\n";
  out << "  \"messages\": " << stats.messages << ",\n";
  out << "  \"bytes\": " << stats.bytes << ",\n";
  out << "  \"hop_weighted_cost\": " << stats.hop_cost << ",\n";
  out << "  \"imbalance\": " << stats.imbalance << ",\n";
  auto volumes = [&](const std::vector<std::uint64_t>& v) {
    out << '[';
    for (std::size_t i = 0; i < v.size(); ++i)
      out << (i ? ", " : "") << v[i];
    out << ']';
  };
  out << "  \"sent\": ";
  volumes(stats.sent);
  out << ",\n  \"received\": ";
  volumes(stats.received);
  out << "\n}\n";
  if (!out.good()) throw io_error("failed writing " + path);
}

} // namespace hfmm::part
