#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hfmm/common.hpp"
#include "hfmm/octree.hpp"
#include "hfmm/traversal.hpp"

// single-process simulation of the distributed pipeline: weighted recursive
// bisection, measured work/communication weights, the staged sparse exchange
// with explicit message records, and hop-cost accounting for a dragonfly
// interconnect. no transport runs here; the protocol logic is the product.
namespace hfmm::part {

struct Aabb {
  Vec3 lo{};
  Vec3 hi{};

  bool contains(const Vec3& p) const {
    return p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y &&
           p.z >= lo.z && p.z <= hi.z;
  }
};

// recursive-bisection result. boxes are nested half-space slabs of the root
// bounding box, so they tile it; bodies sitting exactly on a cut plane belong
// to the side the index order put them on (both closed boxes contain them)
struct PartitionPlan {
  int nranks = 0;
  std::vector<Aabb> boxes;               // one per rank
  std::vector<std::uint32_t> assignment; // one per body
  std::vector<double> rank_weight;       // summed body weights per rank

  double imbalance() const; // max/mean of rank_weight
};

// splits along the longest axis of the current slab at the weighted median,
// rank counts divided proportionally so any nranks >= 1 works
PartitionPlan orb_partition(std::span<const fmm::Body> bodies, int nranks);

// workload estimate for one body: local direct work plus alpha times the
// remote translation traffic it induces
double compute_weight(double local_size, double remote_size, double alpha);

// per-body (local, remote) sizes pulled off an executed traversal plan:
// local counts the direct-sum partners of the body's leaf, remote counts
// translation pairs landing on any enclosing cell. both indexed by the
// ordering the tree was built from
struct WeightSample {
  std::vector<double> local;
  std::vector<double> remote;
};

WeightSample measure_weights(const fmm::Octree& tree,
                             const fmm::TraversalPlan& plan);

// writes compute_weight(sample, alpha) into body.weight; bodies must be in
// the same order the sample's tree was built from
void apply_weights(std::span<fmm::Body> bodies, const WeightSample& sample,
                   double alpha);

struct AlphaSample {
  double alpha = 0;
  double runtime = 0;
};

// next alpha to try, replaying a golden-section search over [0, alpha_max]
// against the measured history. returns the first probe the history does not
// cover yet; once the bracket is tight or the probe budget is spent, returns
// the best measured alpha (earliest on ties, so a flat curve keeps the
// caller's starting point)
double update_alpha(std::span<const AlphaSample> history,
                    double alpha_max = 2.0);

// rank -> node placement on a dragonfly interconnect. coordinates derive
// from the node id by the published arities: 4 nodes to a blade, 64 to a
// chassis, 192 to a cabinet, 384 to a local all-to-all group, 6 local groups
// to a global tier
struct DragonflyMap {
  std::vector<std::uint32_t> node; // per rank
};

struct DragonflyCoord {
  std::uint32_t blade = 0;
  std::uint32_t chassis = 0;
  std::uint32_t cabinet = 0;
  std::uint32_t group = 0;
};

// consecutive placement: rank == node
DragonflyMap dragonfly_map_compact(int nranks);

// places each block of ranks_per_group ranks in its own dragonfly group, so
// rank hierarchies can be made to span group boundaries deliberately
DragonflyMap dragonfly_map_spread(int nranks, int ranks_per_group);

DragonflyCoord dragonfly_coords(const DragonflyMap& map, int rank);

// 0 on the same node, 1 inside one local group, 2 across local groups of one
// global tier, 3 across tiers
int dragonfly_hops(const DragonflyMap& map, int rank_a, int rank_b);

// two-tier rank hierarchy: ranks fall into consecutive groups (the last one
// may be short), the lowest rank of each group leads it. members of a group
// are fully connected; leaders are fully connected with each other. the
// staged exchange runs over these edges only
struct CommGraph {
  int nranks = 0;
  int group_size = 0;
  std::vector<std::vector<int>> adjacency; // sorted, symmetric
  std::vector<int> leader;                 // per rank
  std::vector<std::vector<int>> groups;    // member lists, ascending
};

CommGraph build_comm_graph(int nranks, int group_size);

enum class Stage { neighbor = 0, relay1 = 1, relay2 = 2, direct = 3 };

const char* stage_name(Stage s);

struct MessageRecord {
  Stage stage = Stage::neighbor;
  int src = 0;
  int dst = 0;
  std::uint64_t bytes = 0;
  int hops = 0;
  std::vector<int> payload; // source ranks whose data rides this message
};

struct ExchangeStats {
  std::size_t messages = 0;
  std::uint64_t bytes = 0; // relayed payloads count once per edge they ride
  double hop_cost = 0;     // sum of bytes * hops
  std::vector<std::uint64_t> sent;     // per rank
  std::vector<std::uint64_t> received; // per rank
  double imbalance = 0;                // max/mean of sent volumes
  std::vector<MessageRecord> schedule; // stage order, then discovery order
};

struct ExchangeConfig {
  // records larger than this split; mirrors the 2 GB transport record limit
  std::uint64_t chunk_limit = std::uint64_t(1) << 31;
};

// routes every needed (src, dst) payload over the graph, bundling all data
// that rides one edge in one stage into a single message. paths are breadth
// first with lowest-rank tie breaks and may relay at most twice; a needed
// pair further apart than that is a topology_error. needs[d] lists the
// source ranks whose payload rank d consumes
ExchangeStats hsdx_exchange(const CommGraph& graph,
                            std::span<const std::uint64_t> payload_bytes,
                            const std::vector<std::vector<int>>& needs,
                            const DragonflyMap& map,
                            const ExchangeConfig& cfg = {});

// every rank needs every other rank's payload
ExchangeStats hsdx_exchange(const CommGraph& graph,
                            std::span<const std::uint64_t> payload_bytes,
                            const DragonflyMap& map,
                            const ExchangeConfig& cfg = {});

// the flat comparison: P*(P-1) direct messages, hop-weighted the same way
ExchangeStats alltoall_baseline(std::span<const std::uint64_t> payload_bytes,
                                const DragonflyMap& map,
                                const ExchangeConfig& cfg = {});

// trace rows as "stage,src,dst,bytes,hops"
void write_exchange_csv(const std::string& path, const ExchangeStats& stats);

// totals plus per-rank volumes
void write_exchange_json(const std::string& path, const ExchangeStats& stats);

} // namespace hfmm::part
