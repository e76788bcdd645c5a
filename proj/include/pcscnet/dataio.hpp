#pragma once
#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "pcscnet/geometry.hpp"

namespace pcsc {

inline constexpr int kIgnoreLabel = -1;

// Raw 16-bit label id -> training class id, or kIgnoreLabel. Unknown raw ids
// are an error, never a silent drop.
struct RemapTable {
    std::unordered_map<uint16_t, int> map;
    bool identity = false;

    int remap(uint16_t raw) const;
    static RemapTable identity_table();
    // Plain text, one "raw_id class_id" pair per line, '#' comments,
    // class_id -1 marks ignored.
    static RemapTable from_file(const std::string& path);
};

// Point file: packed 4 x f32 little-endian (x, y, z, remission) per point.
// Label file: one u32 per point, low 16 bits semantic, high 16 instance.
PointCloud read_scan(const std::string& bin_path, const std::string& label_path, const RemapTable& remap);
void write_scan(const std::string& bin_path, const std::string& label_path, const PointCloud& cloud);

// Desk-scale synthetic scene: a ground plane plus boxes (building and car
// sized), vertical cylinders (pole) and volumetric blobs (vegetation), each
// tagged with its primitive's class. Deterministic per seed.
struct SceneSpec {
    double extent = 8.0;       // meters, scene footprint [0, extent]^2
    int target_points = 20000; // approximate total, split across primitives
    double noise_sigma = 0.01; // surface jitter, meters
    uint64_t seed = 1;

    int n_buildings = 2;
    int n_cars = 3;
    int n_poles = 4;
    int n_blobs = 4;

    int ground_class = 0;
    int building_class = 1;
    int car_class = 2;
    int pole_class = 3;
    int vegetation_class = 4;

    int num_classes() const { return 5; }
};

struct Primitive {
    enum class Kind { ground, box, cylinder, blob };
    Kind kind;
    int class_id;
    // box: center xy, half extents, height; cylinder: center xy, radius,
    // height; blob: center xyz, radius. Ground uses none of them.
    std::array<double, 3> center{};
    std::array<double, 3> half{};
    double radius = 0.0;
    double height = 0.0;
};

struct SyntheticScene {
    PointCloud cloud;
    std::vector<Primitive> primitives;
};

SyntheticScene generate_scene_full(const SceneSpec& spec);
PointCloud generate_scene(const SceneSpec& spec);

// Distance from a position to a primitive's sampled surface/volume; used to
// re-derive labels for noise-free scenes.
double primitive_distance(const Primitive& prim, double x, double y, double z);
int nearest_primitive_class(const SyntheticScene& scene, double x, double y, double z);

enum class PlyFormat { binary, ascii };

std::vector<std::array<uint8_t, 3>> default_palette(int classes);

// x, y, z as f64 plus uchar rgb from the palette indexed by label.
void export_ply(const std::string& path, const PointCloud& cloud, const std::vector<int>& labels,
                const std::vector<std::array<uint8_t, 3>>& palette, PlyFormat format);
// Correct points gray, mismatched points red.
void export_ply_error_map(const std::string& path, const PointCloud& cloud, const std::vector<int>& predicted,
                          const std::vector<int>& truth, PlyFormat format);

struct ScanPaths {
    std::string bin_path;
    std::string label_path; // empty when absent
};

struct DatasetSplit {
    std::vector<ScanPaths> train;
    std::vector<ScanPaths> val;
};

// root/sequences/<id>/velodyne/*.bin with labels under labels/*.label.
// Scan lists are sorted by filename; train and val must not overlap.
DatasetSplit split_sequences(const std::string& root, const std::vector<std::string>& train_list,
                             const std::vector<std::string>& val_list);

// Flat directory of *.bin (+ optional matching *.label), sorted by filename.
std::vector<ScanPaths> list_scan_dir(const std::string& dir);

} // namespace pcsc
