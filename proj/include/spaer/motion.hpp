#pragma once

#include "spaer/errors.hpp"
#include "spaer/field.hpp"
#include "spaer/geometry.hpp"

#include <string>
#include <vector>

namespace spaer {

/// Rigid path of a sequence. transforms[t] maps frame t onto frame t+1;
/// accumulated[t] maps frame 0 onto frame t. `residuals` is empty or holds one
/// displacement field per frame, applied after rigid alignment to frame 0.
struct MotionSequence {
    std::vector<RigidTransform> transforms;
    std::vector<RigidTransform> accumulated;
    std::vector<DeformationField> residuals;

    [[nodiscard]] std::size_t frames() const { return accumulated.size(); }

    /// accumulated[0] = identity, accumulated[t+1] = compose(transforms[t], accumulated[t]).
    static MotionSequence from_pairwise(std::vector<RigidTransform> pairwise) {
        MotionSequence m;
        m.accumulated.push_back(RigidTransform::identity());
        for (const auto& q : pairwise) m.accumulated.push_back(compose(q, m.accumulated.back()));
        m.transforms = std::move(pairwise);
        return m;
    }

    /// Pairwise transforms path[t+1] o path[t]^-1, accumulated again from identity.
    /// `path[0]` is expected to be (close to) the identity.
    static MotionSequence from_accumulated(const std::vector<RigidTransform>& path) {
        std::vector<RigidTransform> pairwise;
        for (std::size_t t = 0; t + 1 < path.size(); ++t) pairwise.push_back(compose(path[t + 1], inverse(path[t])));
        return from_pairwise(std::move(pairwise));
    }
};

} // namespace spaer
