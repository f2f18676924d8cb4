#include "frontal/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace fs = std::filesystem;

namespace frontal {

namespace {

constexpr const char* kManifestHeader = "path,identity,domain,pose,frontal,landmarks";

double smoothstep(double e0, double e1, double x) {
    double t = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
    return t * t * (3 - 2 * t);
}

double mix(double a, double b, double t) { return a + (b - a) * t; }

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

Tensor tensor_from_mat(const cv::Mat& img) {
    cv::Mat f;
    int depth = img.depth();
    double scale = depth == CV_8U ? 1.0 / 255.0 : depth == CV_16U ? 1.0 / 65535.0 : 1.0;
    img.convertTo(f, CV_64F, scale);
    if (f.channels() == 1) {
        cv::Mat three;
        cv::merge(std::vector<cv::Mat>{f, f, f}, three);
        f = three;
    }
    if (f.channels() != 3)
        throw std::runtime_error("unsupported channel count " + std::to_string(f.channels()));
    Tensor t({3, f.rows, f.cols});
    for (int y = 0; y < f.rows; ++y) {
        const cv::Vec3d* row = f.ptr<cv::Vec3d>(y);
        for (int x = 0; x < f.cols; ++x)
            for (int c = 0; c < 3; ++c)
                t[(static_cast<long>(c) * f.rows + y) * f.cols + x] = row[x][2 - c];  // BGR->RGB
    }
    return t;
}

}  // namespace

std::string to_string(Domain d) { return d == Domain::thermal ? "thermal" : "visible"; }

Tensor preprocess_file(const std::string& path) {
    cv::Mat img = cv::imread(path, cv::IMREAD_UNCHANGED);
    if (img.empty()) throw std::runtime_error("cannot decode image " + path);
    if (img.rows != kImageSize || img.cols != kImageSize)
        cv::resize(img, img, cv::Size(kImageSize, kImageSize), 0, 0, cv::INTER_LINEAR);
    return tensor_from_mat(img);
}

Tensor preprocess(const Tensor& img) {
    if (img.rank() != 3 || (img.dim(0) != 1 && img.dim(0) != 3))
        throw std::invalid_argument("preprocess: expected [1|3,H,W], got " + img.shape_str());
    int C = img.dim(0), H = img.dim(1), W = img.dim(2);
    if (C == 3 && H == kImageSize && W == kImageSize) return img;

    Tensor out({3, kImageSize, kImageSize});
    for (int c = 0; c < 3; ++c) {
        int src_c = C == 1 ? 0 : c;
        cv::Mat plane(H, W, CV_64F);
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                plane.at<double>(y, x) = img[(static_cast<long>(src_c) * H + y) * W + x];
        if (H != kImageSize || W != kImageSize)
            cv::resize(plane, plane, cv::Size(kImageSize, kImageSize), 0, 0, cv::INTER_LINEAR);
        for (int y = 0; y < kImageSize; ++y)
            for (int x = 0; x < kImageSize; ++x)
                out[(static_cast<long>(c) * kImageSize + y) * kImageSize + x] =
                    plane.at<double>(y, x);
    }
    return out;
}

Dataset Dataset::load(const std::string& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw std::runtime_error("cannot open manifest " + manifest_path);

    Dataset ds;
    ds.root_ = fs::path(manifest_path).parent_path().string();
    if (ds.root_.empty()) ds.root_ = ".";

    std::string line;
    int lineno = 0;
    if (!std::getline(in, line)) throw std::runtime_error(manifest_path + ": empty manifest");
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kManifestHeader)
        throw std::runtime_error(manifest_path + ":1: expected header '" +
                                 std::string(kManifestHeader) + "'");

    auto row_error = [&](const std::string& msg) {
        throw std::runtime_error(manifest_path + ":" + std::to_string(lineno) + ": " + msg);
    };

    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        auto fields = split_csv(line);
        if (fields.size() != 6) row_error("expected 6 fields, got " + std::to_string(fields.size()));
        FaceRecord r;
        r.path = fields[0];
        r.identity = fields[1];
        if (r.path.empty() || r.identity.empty()) row_error("empty path or identity");
        if (fields[2] == "thermal")
            r.domain = Domain::thermal;
        else if (fields[2] == "visible")
            r.domain = Domain::visible;
        else
            row_error("unknown domain '" + fields[2] + "'");
        try {
            size_t used = 0;
            r.pose_deg = std::stod(fields[3], &used);
            if (used != fields[3].size()) throw std::invalid_argument("");
        } catch (...) {
            row_error("bad pose '" + fields[3] + "'");
        }
        if (fields[4] == "0")
            r.frontal = false;
        else if (fields[4] == "1")
            r.frontal = true;
        else
            row_error("bad frontal flag '" + fields[4] + "'");
        if (r.frontal != (std::fabs(r.pose_deg) <= 5.0))
            row_error("frontal flag inconsistent with pose " + fields[3]);
        r.landmarks = fields[5];
        ds.records_.push_back(std::move(r));
    }

    // Group records and enforce the pairing invariant.
    std::set<std::string> unpaired;
    for (size_t i = 0; i < ds.records_.size(); ++i) {
        const FaceRecord& r = ds.records_[i];
        IdentityGroup& g = ds.groups_[r.identity];
        if (r.domain == Domain::thermal && !r.frontal)
            g.thermal_profiles.push_back(static_cast<int>(i));
        else if (r.domain == Domain::thermal)
            g.thermal_frontals.push_back(static_cast<int>(i));
        else if (r.frontal)
            g.visible_frontals.push_back(static_cast<int>(i));
    }
    for (const auto& [id, g] : ds.groups_) {
        ds.identities_.push_back(id);
        if (!g.thermal_profiles.empty() && g.visible_frontals.empty()) unpaired.insert(id);
    }
    if (!unpaired.empty()) {
        std::string msg = "thermal profiles without a paired visible frontal:";
        for (const auto& id : unpaired) msg += " " + id;
        throw std::runtime_error(msg);
    }

    ds.images_.reserve(ds.records_.size());
    ds.has_lm_.assign(ds.records_.size(), 0);
    ds.lms_.resize(ds.records_.size());
    for (size_t i = 0; i < ds.records_.size(); ++i) {
        const FaceRecord& r = ds.records_[i];
        ds.images_.push_back(preprocess_file(ds.root_ + "/" + r.path));
        if (!r.landmarks.empty()) {
            auto recs = read_landmark_file(ds.root_ + "/" + r.landmarks);
            auto it = recs.find(r.path);
            if (it == recs.end())
                throw std::runtime_error("landmark file " + r.landmarks + " has no record for " +
                                         r.path);
            ds.lms_[i] = it->second;
            ds.has_lm_[i] = 1;
        }
    }
    ds.mask_cache_.resize(ds.records_.size());
    ds.mask_ready_.assign(ds.records_.size(), 0);
    return ds;
}

const IdentityGroup& Dataset::group(const std::string& identity) const {
    auto it = groups_.find(identity);
    if (it == groups_.end()) throw std::out_of_range("unknown identity " + identity);
    return it->second;
}

const Tensor& Dataset::image(int record_idx) const {
    return images_[static_cast<size_t>(record_idx)];
}

bool Dataset::has_landmarks(int record_idx) const {
    return has_lm_[static_cast<size_t>(record_idx)] != 0;
}

const LandmarkSet& Dataset::landmarks_for(int record_idx) const {
    if (!has_landmarks(record_idx))
        throw std::runtime_error("record " + records_[static_cast<size_t>(record_idx)].path +
                                 " has no landmarks");
    return lms_[static_cast<size_t>(record_idx)];
}

const Tensor& Dataset::mask_for(int record_idx) const {
    auto i = static_cast<size_t>(record_idx);
    if (!mask_ready_[i]) {
        mask_cache_[i] = mask_from_landmarks(landmarks_for(record_idx), kImageSize, kImageSize).map;
        mask_ready_[i] = 1;
    }
    return mask_cache_[i];
}

std::vector<int> Dataset::records_of(const std::vector<std::string>& identities) const {
    std::set<std::string> want(identities.begin(), identities.end());
    std::vector<int> out;
    for (size_t i = 0; i < records_.size(); ++i)
        if (want.count(records_[i].identity)) out.push_back(static_cast<int>(i));
    return out;
}

PairBatch sample_dual_path_batch(const Dataset& ds, int batch_size, double same_id_fraction,
                                 Rng& rng) {
    if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
    if (batch_size % 2 != 0)
        throw std::invalid_argument("batch size must be even (dual-path pairs)");

    std::vector<std::string> usable;
    for (const auto& id : ds.identities())
        if (!ds.group(id).thermal_profiles.empty()) usable.push_back(id);
    if (usable.size() < 2)
        throw std::invalid_argument("dual-path sampling needs at least 2 identities with "
                                    "thermal profiles");

    int n = batch_size / 2;
    PairBatch b;
    b.x1 = Tensor({n, 3, kImageSize, kImageSize});
    b.x2 = Tensor({n, 3, kImageSize, kImageSize});
    b.y1 = Tensor({n, 3, kImageSize, kImageSize});
    b.y2 = Tensor({n, 3, kImageSize, kImageSize});
    b.m1 = Tensor({n, 1, kImageSize, kImageSize});
    b.m2 = Tensor({n, 1, kImageSize, kImageSize});
    b.same_identity = Tensor({n});

    auto put = [&](Tensor& dst, int slot, const Tensor& src) {
        long plane = src.size();
        std::copy_n(src.data(), plane, dst.data() + static_cast<long>(slot) * plane);
    };
    auto pick = [&](const std::vector<int>& v) {
        return v[static_cast<size_t>(rng.below(v.size()))];
    };

    for (int i = 0; i < n; ++i) {
        const std::string& id1 = usable[static_cast<size_t>(rng.below(usable.size()))];
        bool same = rng.uniform() < same_id_fraction;
        std::string id2 = id1;
        if (!same) {
            do {
                id2 = usable[static_cast<size_t>(rng.below(usable.size()))];
            } while (id2 == id1);
        }
        int r1 = pick(ds.group(id1).thermal_profiles);
        int r2 = pick(ds.group(id2).thermal_profiles);
        // same-identity pairs should contrast two distinct profiles when the
        // identity has more than one
        while (same && r2 == r1 && ds.group(id2).thermal_profiles.size() > 1)
            r2 = pick(ds.group(id2).thermal_profiles);
        int g1 = pick(ds.group(id1).visible_frontals);
        int g2 = pick(ds.group(id2).visible_frontals);
        put(b.x1, i, ds.image(r1));
        put(b.x2, i, ds.image(r2));
        put(b.y1, i, ds.image(g1));
        put(b.y2, i, ds.image(g2));
        put(b.m1, i, ds.mask_for(g1));
        put(b.m2, i, ds.mask_for(g2));
        b.same_identity[i] = same ? 1.0 : 0.0;
        b.id1.push_back(id1);
        b.id2.push_back(id2);
    }
    return b;
}

// ---------------------------------------------------------------- rendering

namespace {

// Luminance of the frontal face at frontal coordinates; geometry only, no pose.
double face_luminance(const FaceGeometry& g, double xf, double y, double* face_alpha) {
    const double cx = 64.0, cy = 66.0;
    double nx = (xf - cx) / g.face_rx;
    double ny = (y - cy) / g.face_ry;
    double r = std::sqrt(nx * nx + ny * ny);
    double inside = 1.0 - smoothstep(0.94, 1.02, r);
    *face_alpha = inside;
    if (inside <= 0.0) return 0.0;

    double base = g.skin * (1.0 - 0.30 * r * r);

    double eye_rx = 0.25 * g.eye_half + 1.0;
    double eye_ry = 0.62 * eye_rx;
    for (double ex : {cx - g.eye_half, cx + g.eye_half}) {
        double dx = (xf - ex) / eye_rx;
        double dy = (y - g.eye_y) / eye_ry;
        double de = std::sqrt(dx * dx + dy * dy);
        base = mix(base, 0.14, 1.0 - smoothstep(0.75, 1.1, de));
        base = mix(base, 0.05, 1.0 - smoothstep(0.25, 0.45, de));
        // brow bar above the eye
        double brow_y = g.eye_y - 0.45 * g.eye_half - 2.0 + g.brow_drop;
        double bx = 1.0 - smoothstep(eye_rx + 2.0, eye_rx + 3.5, std::fabs(xf - ex));
        double by = 1.0 - smoothstep(1.4, 2.6, std::fabs(y - brow_y));
        base = mix(base, 0.22, 0.85 * bx * by);
    }

    double tip = g.eye_y + g.nose_len;
    double in_nose = smoothstep(g.eye_y + 2.0, g.eye_y + 5.0, y) *
                     (1.0 - smoothstep(tip - 1.0, tip + 2.5, y));
    if (in_nose > 0) {
        double dx = xf - cx;
        base += 0.10 * std::exp(-dx * dx / (2.2 * 2.2)) * in_nose;
        double sx = dx - 2.6;
        base -= 0.13 * std::exp(-sx * sx / (1.8 * 1.8)) * in_nose;
    }
    for (double nxr : {cx - 2.8, cx + 2.8}) {
        double dx = xf - nxr, dy = y - (tip + 0.5);
        double dd = std::sqrt(dx * dx + dy * dy);
        base = mix(base, 0.22, 1.0 - smoothstep(0.8, 1.6, dd));
    }

    double mh = 2.2 + 0.4 * std::fabs(g.mouth_curve);
    double mdx = (xf - cx) / g.mouth_half;
    double mdy = (y - (g.mouth_y + 0.15 * g.mouth_curve * mdx * mdx)) / mh;
    double dm = std::sqrt(mdx * mdx + mdy * mdy);
    base = mix(base, 0.20, 1.0 - smoothstep(0.8, 1.05, dm));

    return std::clamp(base, 0.0, 1.0);
}

void box_blur3(Tensor& img) {
    int H = img.dim(1), W = img.dim(2);
    Tensor tmp = img;
    const double k[3] = {0.25, 0.5, 0.25};
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            double acc = 0;
            for (int i = -1; i <= 1; ++i) {
                int xx = std::clamp(x + i, 0, W - 1);
                acc += k[i + 1] * img[static_cast<long>(y) * W + xx];
            }
            tmp[static_cast<long>(y) * W + x] = acc;
        }
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            double acc = 0;
            for (int i = -1; i <= 1; ++i) {
                int yy = std::clamp(y + i, 0, H - 1);
                acc += k[i + 1] * tmp[static_cast<long>(yy) * W + x];
            }
            img[static_cast<long>(y) * W + x] = acc;
        }
}

}  // namespace

Tensor render_synthetic_face(const SyntheticFaceSpec& spec) {
    if (spec.pose_deg < -90 || spec.pose_deg > 90)
        throw std::invalid_argument("pose must be within [-90, 90] degrees");
    FaceGeometry g = FaceGeometry::from_seed(spec.identity_seed, spec.expression);
    Rng tint_rng(Rng::mix(spec.identity_seed, 0x71A7));
    double bg_off = tint_rng.uniform(-0.02, 0.02);
    double tint_r = tint_rng.uniform(-1.0, 1.0);
    double tint_b = tint_rng.uniform(-1.0, 1.0);

    double rad = spec.pose_deg * M_PI / 180.0;
    double c = std::max(std::cos(rad), 0.05);
    double shift = 14.0 * std::sin(rad);
    double sgn = spec.pose_deg >= 0 ? 1.0 : -1.0;

    const int S = kImageSize;
    Tensor lum({1, S, S});
    Tensor alpha({1, S, S});
    for (int y = 0; y < S; ++y)
        for (int x = 0; x < S; ++x) {
            double xf = 64.0 + (x - 64.0 - shift) / c;  // invert the pose warp
            double a = 0;
            double L = face_luminance(g, xf, static_cast<double>(y), &a);
            // the side turning away from the camera falls into shade
            double away = smoothstep(0.0, 40.0, -sgn * (x - 64.0));
            L *= 1.0 - 0.35 * std::fabs(std::sin(rad)) * away;
            lum[static_cast<long>(y) * S + x] = L;
            alpha[static_cast<long>(y) * S + x] = a;
        }

    if (spec.domain == Domain::visible) {
        Tensor out({3, S, S});
        for (int y = 0; y < S; ++y)
            for (int x = 0; x < S; ++x) {
                long i = static_cast<long>(y) * S + x;
                double bg = 0.26 + 0.08 * (static_cast<double>(y) / (S - 1)) + bg_off;
                double L = mix(bg, lum[i], alpha[i]);
                out[i] = std::clamp(L * (1.0 + 0.06 * tint_r), 0.0, 1.0);
                out[static_cast<long>(S) * S + i] = std::clamp(L, 0.0, 1.0);
                out[2L * S * S + i] = std::clamp(L * (1.0 + 0.06 * tint_b), 0.0, 1.0);
            }
        return out;
    }

    // Thermal: contrast inversion of facial detail around the skin level on a
    // warm face over a cold background, then blur.
    Tensor out({1, S, S});
    for (int y = 0; y < S; ++y)
        for (int x = 0; x < S; ++x) {
            long i = static_cast<long>(y) * S + x;
            double cold = 0.10 + 0.04 * (static_cast<double>(y) / (S - 1));
            double hot = g.warmth + 0.5 * (g.skin - lum[i]);
            out[i] = std::clamp(mix(cold, hot, alpha[i]), 0.0, 1.0);
        }
    box_blur3(out);
    box_blur3(out);
    return out;
}

void save_image_png(const std::string& path, const Tensor& img) {
    int C = img.dim(0), H = img.dim(1), W = img.dim(2);
    cv::Mat mat;
    if (C == 1) {
        mat.create(H, W, CV_8UC1);
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                mat.at<uint8_t>(y, x) = static_cast<uint8_t>(
                    std::lround(std::clamp(img[static_cast<long>(y) * W + x], 0.0, 1.0) * 255));
    } else {
        mat.create(H, W, CV_8UC3);
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                auto& px = mat.at<cv::Vec3b>(y, x);
                for (int c = 0; c < 3; ++c)
                    px[2 - c] = static_cast<uint8_t>(std::lround(
                        std::clamp(img[(static_cast<long>(c) * H + y) * W + x], 0.0, 1.0) * 255));
            }
    }
    if (!cv::imwrite(path, mat)) throw std::runtime_error("cannot write image " + path);
}

std::string generate_synthetic_dataset(const SyntheticDatasetOptions& opt,
                                       const std::string& out_dir) {
    if (opt.n_identities < 2)
        throw std::invalid_argument("synthetic dataset needs at least 2 identities");
    std::error_code ec;
    fs::create_directories(fs::path(out_dir) / "images", ec);
    fs::create_directories(fs::path(out_dir) / "landmarks", ec);
    if (!fs::is_directory(fs::path(out_dir) / "images") ||
        !fs::is_directory(fs::path(out_dir) / "landmarks"))
        throw std::runtime_error("cannot create dataset directories under " + out_dir);

    std::ostringstream manifest;
    manifest << kManifestHeader << "\n";

    char buf[128];
    for (int i = 0; i < opt.n_identities; ++i) {
        uint64_t id_seed = Rng::mix(opt.seed, static_cast<uint64_t>(i));
        std::snprintf(buf, sizeof(buf), "id%04d", i);
        std::string id = buf;

        // visible frontal with landmarks
        std::string vis_rel = "images/" + id + "_vis_front.png";
        save_image_png(out_dir + "/" + vis_rel,
                  render_synthetic_face({id_seed, 0.0, Domain::visible, 0}));
        std::string lm_rel = "landmarks/" + id + "_vis_front.txt";
        write_landmark_file(out_dir + "/" + lm_rel, vis_rel, synthetic_landmarks(id_seed, 0.0));
        manifest << vis_rel << "," << id << ",visible,0,1," << lm_rel << "\n";

        // thermal frontal
        std::string thf_rel = "images/" + id + "_thm_front.png";
        save_image_png(out_dir + "/" + thf_rel,
                  render_synthetic_face({id_seed, 0.0, Domain::thermal, 0}));
        manifest << thf_rel << "," << id << ",thermal,0,1,\n";

        // thermal profiles
        for (double pose : opt.poses) {
            std::snprintf(buf, sizeof(buf), "%+g", pose);
            std::string rel = "images/" + id + "_thm_p" + buf + ".png";
            save_image_png(out_dir + "/" + rel,
                      render_synthetic_face({id_seed, pose, Domain::thermal, 0}));
            manifest << rel << "," << id << ",thermal," << pose << ","
                     << (std::fabs(pose) <= 5.0 ? "1" : "0") << ",\n";
        }
    }

    std::string manifest_path = out_dir + "/manifest.csv";
    std::ofstream mf(manifest_path, std::ios::binary);
    if (!mf) throw std::runtime_error("cannot write manifest " + manifest_path);
    mf << manifest.str();
    return manifest_path;
}

IdentitySplit split_identities(const Dataset& ds) {
    IdentitySplit s;
    const auto& ids = ds.identities();
    for (size_t i = 0; i < ids.size(); ++i) {
        if (i % 4 == 3)
            s.test.push_back(ids[i]);
        else
            s.train.push_back(ids[i]);
    }
    return s;
}

}  // namespace frontal
