#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "frontal/masks.hpp"
#include "frontal/rng.hpp"
#include "frontal/tensor.hpp"

namespace frontal {

inline constexpr int kImageSize = 128;

enum class Domain { thermal, visible };
std::string to_string(Domain d);

struct FaceRecord {
    std::string path;       // image path, relative to the manifest directory
    std::string identity;
    Domain domain = Domain::thermal;
    double pose_deg = 0;
    bool frontal = false;
    std::string landmarks;  // optional landmark file, relative
};

struct IdentityGroup {
    std::vector<int> thermal_profiles;
    std::vector<int> thermal_frontals;
    std::vector<int> visible_frontals;
};

// Manifest-backed dataset; images are preprocessed once at load and the
// handle is read-only afterwards, so shared reads are safe.
class Dataset {
public:
    static Dataset load(const std::string& manifest_path);

    const std::vector<FaceRecord>& records() const { return records_; }
    const std::vector<std::string>& identities() const { return identities_; }
    const IdentityGroup& group(const std::string& identity) const;
    const std::string& root() const { return root_; }

    const Tensor& image(int record_idx) const;         // [3,128,128] in [0,1]
    bool has_landmarks(int record_idx) const;
    const LandmarkSet& landmarks_for(int record_idx) const;
    const Tensor& mask_for(int record_idx) const;       // [1,128,128], cached

    // Restriction to an identity subset (indices into records()).
    std::vector<int> records_of(const std::vector<std::string>& identities) const;

private:
    std::string root_;
    std::vector<FaceRecord> records_;
    std::vector<std::string> identities_;
    std::map<std::string, IdentityGroup> groups_;
    std::vector<Tensor> images_;
    std::vector<char> has_lm_;
    std::vector<LandmarkSet> lms_;
    mutable std::vector<Tensor> mask_cache_;
    mutable std::vector<char> mask_ready_;
};

// Decode + bilinear resize to 128x128, scale into [0,1], single-channel
// inputs replicated to three channels.
Tensor preprocess_file(const std::string& path);
// Idempotent tensor-level counterpart for already-decoded data.
Tensor preprocess(const Tensor& img);

struct PairBatch {
    Tensor x1, x2;            // thermal profiles [n,3,128,128]
    Tensor y1, y2;            // paired visible frontal ground truths
    Tensor m1, m2;            // component masks of y1/y2 [n,1,128,128]
    Tensor same_identity;     // l labels [n]
    std::vector<std::string> id1, id2;

    int pairs() const { return x1.dim(0); }
};

// batch_size counts images across both paths and must be even; the batch
// holds batch_size/2 dual-path pairs.
PairBatch sample_dual_path_batch(const Dataset& ds, int batch_size, double same_id_fraction,
                                 Rng& rng);

struct SyntheticFaceSpec {
    uint64_t identity_seed = 0;
    double pose_deg = 0;
    Domain domain = Domain::visible;
    int expression = 0;
};

// Pure function of the spec; visible images are [3,128,128], thermal [1,128,128].
Tensor render_synthetic_face(const SyntheticFaceSpec& spec);

// 8-bit PNG from a [1|3,H,W] tensor in [0,1].
void save_image_png(const std::string& path, const Tensor& img);

struct SyntheticDatasetOptions {
    int n_identities = 16;
    std::vector<double> poses{-60, -30, 30, 60};
    uint64_t seed = 7;
};

// Writes images/, landmarks/ and manifest.csv under out_dir; returns the
// manifest path. Each identity gets one visible frontal, one thermal frontal
// and one thermal image per pose.
std::string generate_synthetic_dataset(const SyntheticDatasetOptions& opt,
                                       const std::string& out_dir);

struct IdentitySplit {
    std::vector<std::string> train, test;
};

// Disjoint-identity split, 3:1.
IdentitySplit split_identities(const Dataset& ds);

}  // namespace frontal
