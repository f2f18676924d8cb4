#include "frontal/masks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "frontal/rng.hpp"

namespace frontal {

namespace {

Box clip_box(Box b, int height, int width) {
    b.x0 = std::max(b.x0, 0.0);
    b.y0 = std::max(b.y0, 0.0);
    b.x1 = std::min(b.x1, static_cast<double>(width - 1));
    b.y1 = std::min(b.y1, static_cast<double>(height - 1));
    return b;
}

Box centered_box(double cx, double cy, double w, double h) {
    return {cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
}

}  // namespace

double LandmarkSet::interocular() const {
    double dx = right_eye[0] - left_eye[0];
    double dy = right_eye[1] - left_eye[1];
    return std::sqrt(dx * dx + dy * dy);
}

void LandmarkSet::validate(int height, int width) const {
    auto inside = [&](const std::array<double, 2>& p) {
        return p[0] >= 0 && p[0] <= width - 1 && p[1] >= 0 && p[1] <= height - 1;
    };
    for (const auto* p : {&left_eye, &right_eye, &nose, &mouth_left, &mouth_right})
        if (!inside(*p))
            throw std::invalid_argument("landmark outside image frame");
    if (!(left_eye[0] < right_eye[0]))
        throw std::invalid_argument("left eye must lie left of right eye");
}

long ComponentMask::area() const {
    long a = 0;
    for (long i = 0; i < map.size(); ++i) a += map[i] != 0.0 ? 1 : 0;
    return a;
}

ComponentMask mask_from_landmarks(const LandmarkSet& lm, int height, int width) {
    lm.validate(height, width);
    double d = lm.interocular();
    if (d < 4.0) throw std::invalid_argument("landmarks collapsed");

    // Eye boxes sit slightly above the eye centers so the brows fall inside.
    std::vector<Box> boxes;
    boxes.push_back(centered_box(lm.left_eye[0], lm.left_eye[1] - 0.1 * d, 0.45 * d, 0.35 * d));
    boxes.push_back(centered_box(lm.right_eye[0], lm.right_eye[1] - 0.1 * d, 0.45 * d, 0.35 * d));
    boxes.push_back(centered_box(lm.nose[0], lm.nose[1], 0.35 * d, 0.45 * d));
    Box mouth{std::min(lm.mouth_left[0], lm.mouth_right[0]) - 0.15 * d,
              std::min(lm.mouth_left[1], lm.mouth_right[1]) - 0.15 * d,
              std::max(lm.mouth_left[0], lm.mouth_right[0]) + 0.15 * d,
              std::max(lm.mouth_left[1], lm.mouth_right[1]) + 0.15 * d};
    boxes.push_back(mouth);

    ComponentMask m;
    m.map = Tensor::zeros({1, height, width});
    for (Box& b : boxes) b = clip_box(b, height, width);
    m.boxes = boxes;
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            for (const Box& b : boxes)
                if (b.contains(x, y)) {
                    m.map[static_cast<long>(y) * width + x] = 1.0;
                    break;
                }
    return m;
}

Tensor apply_mask(const ComponentMask& m, const Tensor& img) {
    int H = m.map.dim(1), W = m.map.dim(2);
    if (img.rank() != 3 && img.rank() != 4)
        throw std::invalid_argument("apply_mask: image rank " + img.shape_str());
    int ih = img.dim(img.rank() - 2), iw = img.dim(img.rank() - 1);
    if (ih != H || iw != W)
        throw std::invalid_argument("apply_mask: mask [" + std::to_string(H) + "," +
                                    std::to_string(W) + "] vs image " + img.shape_str());
    Tensor out = img;
    long plane = static_cast<long>(H) * W;
    long planes = img.size() / plane;
    for (long p = 0; p < planes; ++p) {
        double* dst = out.data() + p * plane;
        for (long i = 0; i < plane; ++i) dst[i] *= m.map[i];
    }
    return out;
}

Var apply_mask(const Tensor& masks, const Var& imgs) {
    if (masks.rank() != 4 || masks.dim(1) != 1)
        throw std::invalid_argument("apply_mask: masks must be [B,1,H,W], got " +
                                    masks.shape_str());
    const Tensor& t = imgs.value();
    if (t.rank() != 4 || t.dim(2) != masks.dim(2) || t.dim(3) != masks.dim(3) ||
        (masks.dim(0) != 1 && masks.dim(0) != t.dim(0)))
        throw std::invalid_argument("apply_mask: masks " + masks.shape_str() + " vs images " +
                                    t.shape_str());
    return mul(imgs, Var::leaf(masks, false));
}

FaceGeometry FaceGeometry::from_seed(uint64_t identity_seed, int expression) {
    Rng rng(Rng::mix(identity_seed, 0xFACE));
    FaceGeometry g;
    g.eye_y = rng.uniform(48, 58);
    g.eye_half = rng.uniform(17, 23);
    g.nose_len = rng.uniform(16, 26);
    g.mouth_y = g.eye_y + g.nose_len + rng.uniform(12, 18);
    g.mouth_half = rng.uniform(12, 17);
    g.face_rx = rng.uniform(38, 46);
    g.face_ry = rng.uniform(50, 60);
    g.skin = rng.uniform(0.55, 0.80);
    g.warmth = rng.uniform(0.75, 0.95);
    if (expression != 0) {
        Rng er(Rng::mix(identity_seed, 0xE0 + static_cast<uint64_t>(expression)));
        g.brow_drop = er.uniform(-2.0, 2.0);
        g.mouth_curve = er.uniform(-3.0, 3.0);
    }
    return g;
}

double project_x(double x, double pose_deg, double center) {
    double rad = pose_deg * M_PI / 180.0;
    return center + (x - center) * std::cos(rad) + 14.0 * std::sin(rad);
}

LandmarkSet frontal_landmarks(const FaceGeometry& g) {
    LandmarkSet lm;
    lm.left_eye = {64.0 - g.eye_half, g.eye_y};
    lm.right_eye = {64.0 + g.eye_half, g.eye_y};
    lm.nose = {64.0, g.eye_y + g.nose_len};
    lm.mouth_left = {64.0 - g.mouth_half, g.mouth_y};
    lm.mouth_right = {64.0 + g.mouth_half, g.mouth_y};
    return lm;
}

LandmarkSet synthetic_landmarks(uint64_t identity_seed, double pose_deg) {
    if (pose_deg < -90.0 || pose_deg > 90.0)
        throw std::invalid_argument("pose must be within [-90, 90] degrees");
    LandmarkSet lm = frontal_landmarks(FaceGeometry::from_seed(identity_seed));
    auto warp = [&](std::array<double, 2>& p) {
        p[0] = std::clamp(project_x(p[0], pose_deg), 1.0, 126.0);
    };
    warp(lm.left_eye);
    warp(lm.right_eye);
    warp(lm.nose);
    warp(lm.mouth_left);
    warp(lm.mouth_right);
    return lm;
}

void write_landmark_file(const std::string& path, const std::string& image_rel,
                         const LandmarkSet& lm) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write landmark file " + path);
    out.precision(6);
    out << image_rel;
    for (const auto* p : {&lm.left_eye, &lm.right_eye, &lm.nose, &lm.mouth_left, &lm.mouth_right})
        out << " " << std::fixed << (*p)[0] << " " << (*p)[1];
    out << "\n";
}

std::unordered_map<std::string, LandmarkSet> read_landmark_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open landmark file " + path);
    std::unordered_map<std::string, LandmarkSet> records;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream is(line);
        std::string rel;
        LandmarkSet lm;
        is >> rel >> lm.left_eye[0] >> lm.left_eye[1] >> lm.right_eye[0] >> lm.right_eye[1] >>
            lm.nose[0] >> lm.nose[1] >> lm.mouth_left[0] >> lm.mouth_left[1] >>
            lm.mouth_right[0] >> lm.mouth_right[1];
        if (!is)
            throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                     ": malformed landmark record");
        records[rel] = lm;
    }
    return records;
}

}  // namespace frontal
