#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "frontal/autodiff.hpp"
#include "frontal/tensor.hpp"

namespace frontal {

// 5-point convention in pixel coordinates (x right, y down); brows are folded
// into enlarged eye boxes when the mask is built.
struct LandmarkSet {
    std::array<double, 2> left_eye{}, right_eye{}, nose{}, mouth_left{}, mouth_right{};

    double interocular() const;
    void validate(int height, int width) const;
};

struct Box {
    double x0 = 0, y0 = 0, x1 = -1, y1 = -1;
    bool contains(double x, double y) const { return x >= x0 && x <= x1 && y >= y0 && y <= y1; }
    bool empty() const { return x1 < x0 || y1 < y0; }
};

// Binary map gating the local critic; always derived from the ground-truth
// visible frontal image's landmarks, never from the profile input.
struct ComponentMask {
    Tensor map;               // [1,H,W], values in {0,1}
    std::vector<Box> boxes;   // clipped component boxes, for introspection
    long area() const;
};

ComponentMask mask_from_landmarks(const LandmarkSet& lm, int height, int width);

Tensor apply_mask(const ComponentMask& m, const Tensor& img);  // [C,H,W] or [B,C,H,W]
// Differentiable application with a batch of per-element masks [B,1,H,W].
Var apply_mask(const Tensor& masks, const Var& imgs);

// Identity-parameterized face layout shared by the landmark synthesizer and
// the procedural renderer.
struct FaceGeometry {
    double eye_y = 52, eye_half = 20, nose_len = 22, mouth_y = 94, mouth_half = 14;
    double face_rx = 42, face_ry = 55;
    double skin = 0.7, warmth = 0.85;
    double brow_drop = 0, mouth_curve = 0;

    static FaceGeometry from_seed(uint64_t identity_seed, int expression = 0);
};

// Horizontal projective squash toward profile plus a lateral shift.
double project_x(double x, double pose_deg, double center = 64.0);

LandmarkSet frontal_landmarks(const FaceGeometry& geom);
LandmarkSet synthetic_landmarks(uint64_t identity_seed, double pose_deg);

// Landmark records: image-relative path followed by 10 floats (x,y per point).
void write_landmark_file(const std::string& path, const std::string& image_rel,
                         const LandmarkSet& lm);
std::unordered_map<std::string, LandmarkSet> read_landmark_file(const std::string& path);

}  // namespace frontal
