#include "pcscnet/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

namespace fs = std::filesystem;

namespace pcsc {

int RemapTable::remap(uint16_t raw) const {
    if (identity) return int(raw);
    auto it = map.find(raw);
    if (it == map.end())
        throw std::runtime_error("remap: unknown raw label id " + std::to_string(raw));
    return it->second;
}

RemapTable RemapTable::identity_table() {
    RemapTable t;
    t.identity = true;
    return t;
}

RemapTable RemapTable::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("remap: cannot open " + path);
    RemapTable t;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::istringstream ls(line);
        long raw, cls;
        if (!(ls >> raw)) continue; // blank line
        if (!(ls >> cls))
            throw std::runtime_error("remap: malformed line " + std::to_string(lineno) + " in " + path);
        if (raw < 0 || raw > 0xffff)
            throw std::runtime_error("remap: raw id out of range on line " + std::to_string(lineno));
        t.map[uint16_t(raw)] = int(cls);
    }
    if (t.map.empty()) throw std::runtime_error("remap: no entries in " + path);
    return t;
}

PointCloud read_scan(const std::string& bin_path, const std::string& label_path, const RemapTable& remap) {
    std::ifstream in(bin_path, std::ios::binary | std::ios::ate);
    if (!in) throw std::runtime_error("read_scan: cannot open " + bin_path);
    const std::streamoff bytes = in.tellg();
    if (bytes % 16 != 0)
        throw std::runtime_error("read_scan: " + bin_path + " has " + std::to_string(bytes) +
                                 " bytes, not a multiple of 16");
    const int n = int(bytes / 16);
    if (n == 0) throw std::runtime_error("read_scan: " + bin_path + " is empty");
    in.seekg(0);
    std::vector<float> raw(std::size_t(n) * 4);
    in.read(reinterpret_cast<char*>(raw.data()), bytes);
    if (!in) throw std::runtime_error("read_scan: short read on " + bin_path);

    PointCloud cloud;
    cloud.xyz = Matrix(n, 3);
    cloud.intensity.resize(n);
    for (int p = 0; p < n; ++p) {
        cloud.xyz.at(p, 0) = raw[std::size_t(p) * 4 + 0];
        cloud.xyz.at(p, 1) = raw[std::size_t(p) * 4 + 1];
        cloud.xyz.at(p, 2) = raw[std::size_t(p) * 4 + 2];
        // Remission is already in [0,1] for the supported sensors; clamp anyway.
        cloud.intensity[p] = std::clamp(double(raw[std::size_t(p) * 4 + 3]), 0.0, 1.0);
    }

    if (!label_path.empty()) {
        std::ifstream lin(label_path, std::ios::binary | std::ios::ate);
        if (!lin) throw std::runtime_error("read_scan: cannot open " + label_path);
        const std::streamoff lbytes = lin.tellg();
        if (lbytes != std::streamoff(n) * 4)
            throw std::runtime_error("read_scan: " + label_path + " has " + std::to_string(lbytes) +
                                     " bytes; expected " + std::to_string(std::streamoff(n) * 4) + " for " +
                                     std::to_string(n) + " points");
        lin.seekg(0);
        std::vector<uint32_t> words(n);
        lin.read(reinterpret_cast<char*>(words.data()), lbytes);
        if (!lin) throw std::runtime_error("read_scan: short read on " + label_path);
        cloud.labels.resize(n);
        for (int p = 0; p < n; ++p) cloud.labels[p] = remap.remap(uint16_t(words[p] & 0xffffu));
    }
    return cloud;
}

void write_scan(const std::string& bin_path, const std::string& label_path, const PointCloud& cloud) {
    std::ofstream out(bin_path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("write_scan: cannot open " + bin_path);
    const int n = cloud.size();
    std::vector<float> raw(std::size_t(n) * 4);
    for (int p = 0; p < n; ++p) {
        raw[std::size_t(p) * 4 + 0] = float(cloud.xyz.at(p, 0));
        raw[std::size_t(p) * 4 + 1] = float(cloud.xyz.at(p, 1));
        raw[std::size_t(p) * 4 + 2] = float(cloud.xyz.at(p, 2));
        raw[std::size_t(p) * 4 + 3] = cloud.has_intensity() ? float(cloud.intensity[p]) : 0.0f;
    }
    out.write(reinterpret_cast<const char*>(raw.data()), std::streamsize(raw.size() * sizeof(float)));
    if (!out) throw std::runtime_error("write_scan: write failed on " + bin_path);

    if (!label_path.empty()) {
        if (!cloud.has_labels()) throw std::runtime_error("write_scan: cloud has no labels for " + label_path);
        std::ofstream lout(label_path, std::ios::binary | std::ios::trunc);
        if (!lout) throw std::runtime_error("write_scan: cannot open " + label_path);
        std::vector<uint32_t> words(n);
        for (int p = 0; p < n; ++p) words[p] = uint32_t(uint16_t(cloud.labels[p]));
        lout.write(reinterpret_cast<const char*>(words.data()), std::streamsize(words.size() * 4));
        if (!lout) throw std::runtime_error("write_scan: write failed on " + label_path);
    }
}

namespace {

struct SceneBuilder {
    std::mt19937_64 rng;
    std::vector<double> xs, ys, zs, intens;
    std::vector<int> labels;

    explicit SceneBuilder(uint64_t seed) : rng(seed) {}

    double uniform(double lo, double hi) {
        return std::uniform_real_distribution<double>(lo, hi)(rng);
    }
    double gauss(double sigma) {
        return sigma > 0.0 ? std::normal_distribution<double>(0.0, sigma)(rng) : 0.0;
    }

    void add(double x, double y, double z, int cls, double intensity_mean, double noise) {
        xs.push_back(x + gauss(noise));
        ys.push_back(y + gauss(noise));
        zs.push_back(z + gauss(noise));
        intens.push_back(std::clamp(intensity_mean + gauss(0.08), 0.0, 1.0));
        labels.push_back(cls);
    }
};

// Per-class intensity means: distinct enough to learn from, overlapping
// enough that geometry still matters at the boundaries.
constexpr double kIntensityMean[5] = {0.15, 0.40, 0.80, 0.60, 0.30};

} // namespace

SyntheticScene generate_scene_full(const SceneSpec& spec) {
    if (spec.target_points <= 0) throw std::invalid_argument("generate_scene: density must be positive");
    const int prim_count = spec.n_buildings + spec.n_cars + spec.n_poles + spec.n_blobs;
    if (prim_count == 0 && spec.extent <= 0.0) throw std::invalid_argument("generate_scene: zero primitives");

    SyntheticScene scene;
    SceneBuilder b(spec.seed);
    const double e = spec.extent;

    // Portion the point budget: roughly half on the ground, the rest split
    // over structures by surface area.
    const int ground_pts = spec.target_points / 2;

    Primitive ground;
    ground.kind = Primitive::Kind::ground;
    ground.class_id = spec.ground_class;
    scene.primitives.push_back(ground);

    // Place boxes and cylinders without overlap so each point's nearest
    // primitive stays unambiguous.
    struct Footprint {
        double x, y, r;
    };
    std::vector<Footprint> placed;
    auto try_place = [&](double radius, double& x, double& y) {
        for (int attempt = 0; attempt < 64; ++attempt) {
            x = b.uniform(radius + 0.2, e - radius - 0.2);
            y = b.uniform(radius + 0.2, e - radius - 0.2);
            bool ok = true;
            for (const auto& f : placed)
                if (std::hypot(x - f.x, y - f.y) < radius + f.r + 0.3) ok = false;
            if (ok) {
                placed.push_back({x, y, radius});
                return true;
            }
        }
        return false;
    };

    auto add_box = [&](double hx_lo, double hx_hi, double h_lo, double h_hi, int cls) {
        Primitive p;
        p.kind = Primitive::Kind::box;
        p.class_id = cls;
        p.half = {b.uniform(hx_lo, hx_hi), b.uniform(hx_lo, hx_hi), 0.0};
        p.height = b.uniform(h_lo, h_hi);
        double x, y;
        if (!try_place(std::hypot(p.half[0], p.half[1]), x, y)) return;
        p.center = {x, y, 0.0};
        scene.primitives.push_back(p);
    };
    for (int i = 0; i < spec.n_buildings; ++i) add_box(0.8, 1.5, 1.2, 2.2, spec.building_class);
    for (int i = 0; i < spec.n_cars; ++i) add_box(0.3, 0.55, 0.4, 0.7, spec.car_class);

    for (int i = 0; i < spec.n_poles; ++i) {
        Primitive p;
        p.kind = Primitive::Kind::cylinder;
        p.class_id = spec.pole_class;
        p.radius = b.uniform(0.06, 0.14);
        p.height = b.uniform(1.0, 2.0);
        double x, y;
        if (!try_place(p.radius, x, y)) continue;
        p.center = {x, y, 0.0};
        scene.primitives.push_back(p);
    }

    for (int i = 0; i < spec.n_blobs; ++i) {
        Primitive p;
        p.kind = Primitive::Kind::blob;
        p.class_id = spec.vegetation_class;
        p.radius = b.uniform(0.4, 0.8);
        double x, y;
        if (!try_place(p.radius, x, y)) continue;
        p.center = {x, y, b.uniform(p.radius + 0.15, p.radius + 0.9)};
        scene.primitives.push_back(p);
    }

    // Ground: uniform over the footprint.
    for (int i = 0; i < ground_pts; ++i)
        b.add(b.uniform(0.0, e), b.uniform(0.0, e), 0.0, spec.ground_class, kIntensityMean[spec.ground_class % 5],
              spec.noise_sigma);

    // Structures: sample surfaces proportional to area out of the remaining budget.
    double total_area = 0.0;
    std::vector<double> areas(scene.primitives.size(), 0.0);
    for (std::size_t i = 1; i < scene.primitives.size(); ++i) {
        const Primitive& p = scene.primitives[i];
        double area = 0.0;
        if (p.kind == Primitive::Kind::box)
            area = 2.0 * (p.half[0] + p.half[1]) * 2.0 * p.height + 4.0 * p.half[0] * p.half[1];
        else if (p.kind == Primitive::Kind::cylinder)
            area = 2.0 * M_PI * p.radius * p.height;
        else if (p.kind == Primitive::Kind::blob)
            area = 4.0 * M_PI * p.radius * p.radius; // volume sampled, weight by shell
        areas[i] = area;
        total_area += area;
    }
    const int struct_pts = spec.target_points - ground_pts;

    for (std::size_t i = 1; i < scene.primitives.size(); ++i) {
        const Primitive& p = scene.primitives[i];
        const int count = total_area > 0.0 ? int(std::lround(struct_pts * areas[i] / total_area)) : 0;
        const double im = kIntensityMean[p.class_id % 5];
        if (p.kind == Primitive::Kind::box) {
            const double wall = 2.0 * (p.half[0] + p.half[1]) * 2.0 * p.height;
            const double roof = 4.0 * p.half[0] * p.half[1];
            for (int j = 0; j < count; ++j) {
                if (b.uniform(0.0, wall + roof) < roof) {
                    b.add(p.center[0] + b.uniform(-p.half[0], p.half[0]),
                          p.center[1] + b.uniform(-p.half[1], p.half[1]), p.height, p.class_id, im, spec.noise_sigma);
                } else {
                    // Unroll the 4 walls into one perimeter interval.
                    const double per = 2.0 * (2.0 * p.half[0] + 2.0 * p.half[1]);
                    double t = b.uniform(0.0, per);
                    double x, y;
                    const double lx = 2.0 * p.half[0], ly = 2.0 * p.half[1];
                    if (t < lx) {
                        x = -p.half[0] + t;
                        y = -p.half[1];
                    } else if (t < lx + ly) {
                        x = p.half[0];
                        y = -p.half[1] + (t - lx);
                    } else if (t < 2 * lx + ly) {
                        x = p.half[0] - (t - lx - ly);
                        y = p.half[1];
                    } else {
                        x = -p.half[0];
                        y = p.half[1] - (t - 2 * lx - ly);
                    }
                    b.add(p.center[0] + x, p.center[1] + y, b.uniform(0.0, p.height), p.class_id, im,
                          spec.noise_sigma);
                }
            }
        } else if (p.kind == Primitive::Kind::cylinder) {
            for (int j = 0; j < count; ++j) {
                const double ang = b.uniform(0.0, 2.0 * M_PI);
                b.add(p.center[0] + p.radius * std::cos(ang), p.center[1] + p.radius * std::sin(ang),
                      b.uniform(0.0, p.height), p.class_id, im, spec.noise_sigma);
            }
        } else if (p.kind == Primitive::Kind::blob) {
            for (int j = 0; j < count; ++j) {
                // Uniform in the ball by rejection.
                double x, y, z;
                do {
                    x = b.uniform(-p.radius, p.radius);
                    y = b.uniform(-p.radius, p.radius);
                    z = b.uniform(-p.radius, p.radius);
                } while (x * x + y * y + z * z > p.radius * p.radius);
                b.add(p.center[0] + x, p.center[1] + y, p.center[2] + z, p.class_id, im, spec.noise_sigma);
            }
        }
    }

    const int n = int(b.xs.size());
    scene.cloud.xyz = Matrix(n, 3);
    for (int p = 0; p < n; ++p) {
        scene.cloud.xyz.at(p, 0) = b.xs[p];
        scene.cloud.xyz.at(p, 1) = b.ys[p];
        scene.cloud.xyz.at(p, 2) = b.zs[p];
    }
    scene.cloud.intensity = std::move(b.intens);
    scene.cloud.labels = std::move(b.labels);
    return scene;
}

PointCloud generate_scene(const SceneSpec& spec) { return generate_scene_full(spec).cloud; }

double primitive_distance(const Primitive& prim, double x, double y, double z) {
    switch (prim.kind) {
        case Primitive::Kind::ground:
            return std::fabs(z);
        case Primitive::Kind::box: {
            // Shell = 4 walls over z in [0, height] plus the roof face.
            const double dx = std::fabs(x - prim.center[0]) - prim.half[0];
            const double dy = std::fabs(y - prim.center[1]) - prim.half[1];
            const double dxy = (dx > 0.0 || dy > 0.0) ? std::hypot(std::max(dx, 0.0), std::max(dy, 0.0))
                                                      : -std::max(dx, dy);
            const double dz = z < 0.0 ? -z : (z > prim.height ? z - prim.height : 0.0);
            const double wall = std::hypot(dxy, dz);
            const double roof = std::sqrt(std::max(dx, 0.0) * std::max(dx, 0.0) +
                                          std::max(dy, 0.0) * std::max(dy, 0.0) +
                                          (z - prim.height) * (z - prim.height));
            return std::min(wall, roof);
        }
        case Primitive::Kind::cylinder: {
            const double dr = std::fabs(std::hypot(x - prim.center[0], y - prim.center[1]) - prim.radius);
            if (z < 0.0) return std::hypot(dr, -z);
            if (z > prim.height) return std::hypot(dr, z - prim.height);
            return dr;
        }
        case Primitive::Kind::blob: {
            const double d = std::sqrt((x - prim.center[0]) * (x - prim.center[0]) +
                                       (y - prim.center[1]) * (y - prim.center[1]) +
                                       (z - prim.center[2]) * (z - prim.center[2]));
            return std::max(0.0, d - prim.radius);
        }
    }
    return 0.0;
}

int nearest_primitive_class(const SyntheticScene& scene, double x, double y, double z) {
    double best = std::numeric_limits<double>::infinity();
    int cls = kIgnoreLabel;
    for (const auto& p : scene.primitives) {
        const double d = primitive_distance(p, x, y, z);
        if (d < best) {
            best = d;
            cls = p.class_id;
        }
    }
    return cls;
}

std::vector<std::array<uint8_t, 3>> default_palette(int classes) {
    std::vector<std::array<uint8_t, 3>> pal(classes);
    for (int c = 0; c < classes; ++c) {
        // Evenly spaced hues, full saturation.
        const double h = 360.0 * double(c) / double(std::max(classes, 1));
        const double s = 0.85, v = 0.95;
        const double f = h / 60.0 - std::floor(h / 60.0);
        const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
        double r, g, b;
        switch (int(h / 60.0) % 6) {
            case 0: r = v; g = t; b = p; break;
            case 1: r = q; g = v; b = p; break;
            case 2: r = p; g = v; b = t; break;
            case 3: r = p; g = q; b = v; break;
            case 4: r = t; g = p; b = v; break;
            default: r = v; g = p; b = q; break;
        }
        pal[c] = {uint8_t(r * 255), uint8_t(g * 255), uint8_t(b * 255)};
    }
    return pal;
}

namespace {

void write_ply(const std::string& path, const PointCloud& cloud, const std::vector<std::array<uint8_t, 3>>& colors,
               PlyFormat format) {
    const int n = cloud.size();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("export_ply: cannot open " + path);
    out << "ply\n";
    out << (format == PlyFormat::binary ? "format binary_little_endian 1.0\n" : "format ascii 1.0\n");
    out << "element vertex " << n << "\n";
    out << "property double x\nproperty double y\nproperty double z\n";
    out << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
    out << "end_header\n";
    if (format == PlyFormat::binary) {
        for (int p = 0; p < n; ++p) {
            double xyz[3] = {cloud.xyz.at(p, 0), cloud.xyz.at(p, 1), cloud.xyz.at(p, 2)};
            out.write(reinterpret_cast<const char*>(xyz), sizeof(xyz));
            out.write(reinterpret_cast<const char*>(colors[p].data()), 3);
        }
    } else {
        out.precision(17);
        for (int p = 0; p < n; ++p)
            out << cloud.xyz.at(p, 0) << " " << cloud.xyz.at(p, 1) << " " << cloud.xyz.at(p, 2) << " "
                << int(colors[p][0]) << " " << int(colors[p][1]) << " " << int(colors[p][2]) << "\n";
    }
    if (!out) throw std::runtime_error("export_ply: write failed on " + path);
}

} // namespace

void export_ply(const std::string& path, const PointCloud& cloud, const std::vector<int>& labels,
                const std::vector<std::array<uint8_t, 3>>& palette, PlyFormat format) {
    if (labels.size() != std::size_t(cloud.size()))
        throw std::invalid_argument("export_ply: label count mismatch");
    std::vector<std::array<uint8_t, 3>> colors(cloud.size());
    for (int p = 0; p < cloud.size(); ++p) {
        const int l = labels[p];
        if (l < 0 || l >= int(palette.size()))
            throw std::invalid_argument("export_ply: palette does not cover label " + std::to_string(l));
        colors[p] = palette[l];
    }
    write_ply(path, cloud, colors, format);
}

void export_ply_error_map(const std::string& path, const PointCloud& cloud, const std::vector<int>& predicted,
                          const std::vector<int>& truth, PlyFormat format) {
    if (predicted.size() != truth.size() || predicted.size() != std::size_t(cloud.size()))
        throw std::invalid_argument("export_ply_error_map: label count mismatch");
    std::vector<std::array<uint8_t, 3>> colors(cloud.size());
    for (int p = 0; p < cloud.size(); ++p)
        colors[p] = predicted[p] == truth[p] ? std::array<uint8_t, 3>{128, 128, 128}
                                             : std::array<uint8_t, 3>{255, 0, 0};
    write_ply(path, cloud, colors, format);
}

std::vector<ScanPaths> list_scan_dir(const std::string& dir) {
    if (!fs::is_directory(dir)) throw std::runtime_error("list_scan_dir: not a directory: " + dir);
    std::vector<ScanPaths> scans;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.path().extension() != ".bin") continue;
        ScanPaths sp;
        sp.bin_path = entry.path().string();
        fs::path label = entry.path();
        label.replace_extension(".label");
        if (fs::exists(label)) sp.label_path = label.string();
        scans.push_back(std::move(sp));
    }
    std::sort(scans.begin(), scans.end(), [](const auto& a, const auto& b) { return a.bin_path < b.bin_path; });
    return scans;
}

DatasetSplit split_sequences(const std::string& root, const std::vector<std::string>& train_list,
                             const std::vector<std::string>& val_list) {
    std::set<std::string> train_set(train_list.begin(), train_list.end());
    for (const auto& s : val_list)
        if (train_set.count(s))
            throw std::runtime_error("split_sequences: sequence " + s + " appears in both train and val");

    auto collect = [&](const std::vector<std::string>& seqs) {
        std::vector<ScanPaths> out;
        for (const auto& seq : seqs) {
            const fs::path vel = fs::path(root) / "sequences" / seq / "velodyne";
            if (!fs::is_directory(vel))
                throw std::runtime_error("split_sequences: missing sequence directory " + vel.string());
            std::vector<ScanPaths> scans;
            for (const auto& entry : fs::directory_iterator(vel)) {
                if (entry.path().extension() != ".bin") continue;
                ScanPaths sp;
                sp.bin_path = entry.path().string();
                fs::path label = fs::path(root) / "sequences" / seq / "labels" /
                                 entry.path().filename().replace_extension(".label");
                if (fs::exists(label)) sp.label_path = label.string();
                scans.push_back(std::move(sp));
            }
            std::sort(scans.begin(), scans.end(),
                      [](const auto& a, const auto& b) { return a.bin_path < b.bin_path; });
            out.insert(out.end(), scans.begin(), scans.end());
        }
        return out;
    };

    DatasetSplit split;
    split.train = collect(train_list);
    split.val = collect(val_list);
    return split;
}

} // namespace pcsc
