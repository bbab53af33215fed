#pragma once

#include <algorithm>
#include <array>
#include <vector>

#include "pcvs/common.hpp"

namespace pcvs {

/// Exact 3-D nearest-neighbour index. Distances compare as (squared distance,
/// point index) so ties always resolve the same way; that determinism is load-
/// bearing for reproducible training, which is why this is hand-rolled rather
/// than an off-the-shelf approximate tree.
class KdTree {
public:
    explicit KdTree(std::vector<std::array<double, 3>> points) : pts_(std::move(points)) {
        if (pts_.empty()) throw ShapeError("kdtree: empty point set");
        order_.resize(pts_.size());
        for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = static_cast<int>(i);
        nodes_.reserve(pts_.size());
        root_ = build(0, static_cast<int>(pts_.size()));
    }

    std::size_t size() const { return pts_.size(); }

    struct Hit {
        double dist;  // Euclidean
        int index;
    };

    /// Exact K nearest neighbours, ascending by (distance, index).
    std::vector<Hit> knn(const std::array<double, 3>& q, int k) const {
        if (k < 1 || static_cast<std::size_t>(k) > pts_.size())
            throw ShapeError("kdtree: K out of range (" + std::to_string(k) + " of " +
                             std::to_string(pts_.size()) + " points)");
        // max-heap on (d2, index): top is the current worst of the best-k
        std::vector<std::pair<double, int>> heap;
        heap.reserve(static_cast<std::size_t>(k));
        search(root_, q, k, heap);
        std::sort(heap.begin(), heap.end());
        std::vector<Hit> out(heap.size());
        for (std::size_t i = 0; i < heap.size(); ++i)
            out[i] = {std::sqrt(heap[i].first), heap[i].second};
        return out;
    }

private:
    struct Node {
        int point = -1;  // index into pts_
        int axis = 0;
        int left = -1, right = -1;
    };

    int build(int lo, int hi) {
        if (lo >= hi) return -1;
        // split on the widest axis of this subset
        std::array<double, 3> mn{1e300, 1e300, 1e300}, mx{-1e300, -1e300, -1e300};
        for (int i = lo; i < hi; ++i)
            for (int a = 0; a < 3; ++a) {
                mn[a] = std::min(mn[a], pts_[static_cast<std::size_t>(order_[i])][a]);
                mx[a] = std::max(mx[a], pts_[static_cast<std::size_t>(order_[i])][a]);
            }
        int axis = 0;
        for (int a = 1; a < 3; ++a)
            if (mx[a] - mn[a] > mx[axis] - mn[axis]) axis = a;

        const int mid = lo + (hi - lo) / 2;
        std::nth_element(order_.begin() + lo, order_.begin() + mid, order_.begin() + hi,
                         [&](int a, int b) {
                             const double ca = pts_[static_cast<std::size_t>(a)][axis];
                             const double cb = pts_[static_cast<std::size_t>(b)][axis];
                             return ca < cb || (ca == cb && a < b);
                         });
        Node node;
        node.point = order_[mid];
        node.axis = axis;
        const int id = static_cast<int>(nodes_.size());
        nodes_.push_back(node);
        const int l = build(lo, mid);
        const int r = build(mid + 1, hi);
        nodes_[static_cast<std::size_t>(id)].left = l;
        nodes_[static_cast<std::size_t>(id)].right = r;
        return id;
    }

    static bool worse(const std::pair<double, int>& a, const std::pair<double, int>& b) {
        return a < b;  // heap top = lexicographically largest (d2, index)
    }

    void search(int id, const std::array<double, 3>& q, int k,
                std::vector<std::pair<double, int>>& heap) const {
        if (id < 0) return;
        const Node& node = nodes_[static_cast<std::size_t>(id)];
        const auto& p = pts_[static_cast<std::size_t>(node.point)];
        const double dx = q[0] - p[0], dy = q[1] - p[1], dz = q[2] - p[2];
        const double d2 = dx * dx + dy * dy + dz * dz;
        const std::pair<double, int> cand{d2, node.point};
        if (heap.size() < static_cast<std::size_t>(k)) {
            heap.push_back(cand);
            std::push_heap(heap.begin(), heap.end(), worse);
        } else if (cand < heap.front()) {
            std::pop_heap(heap.begin(), heap.end(), worse);
            heap.back() = cand;
            std::push_heap(heap.begin(), heap.end(), worse);
        }

        const double diff = q[static_cast<std::size_t>(node.axis)] - p[static_cast<std::size_t>(node.axis)];
        const int near = diff < 0 ? node.left : node.right;
        const int far = diff < 0 ? node.right : node.left;
        search(near, q, k, heap);
        // visit the far side unless it provably cannot improve on the current
        // worst; equality must recurse to honour the index tie-break
        if (heap.size() < static_cast<std::size_t>(k) || diff * diff <= heap.front().first)
            search(far, q, k, heap);
    }

    std::vector<std::array<double, 3>> pts_;
    std::vector<int> order_;
    std::vector<Node> nodes_;
    int root_ = -1;
};

}  // namespace pcvs
