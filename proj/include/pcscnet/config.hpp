#pragma once
#include <string>
#include <vector>

#include "pcscnet/loss.hpp"
#include "pcscnet/model.hpp"

namespace pcsc {

// Flat key=value run configuration. Files use `key = value` lines with '#'
// comments; any key can be overridden afterwards. Unknown keys are an error.
struct RunConfig {
    // model
    double voxel_size = 0.1;
    long long kernel_points = 15;
    long long mlp_layers = 2;
    long long extract_width = 32;
    std::string unet_widths = "32,64,128";
    long long decoder_width = 32;
    long long head_hidden = 64;
    long long classes = 5;
    long long use_intensity = 1;

    // loss
    double w_ce = 1.0;
    double w_pa = 1.5;
    long long knn_k = 10;

    // training
    long long epochs = 150;
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    long long seed = 1;
    double early_stop_acc = 0.0; // stop once train accuracy reaches this (0 = off)

    // data
    std::string data = "synth";  // synth | dir | kitti
    std::string data_dir;
    std::string remap = "identity"; // identity | path to a remap file
    std::string sequences_train = "00,01,02,03,04,05,06,07,09,10";
    std::string sequences_val = "08";
    long long synth_scenes = 5;
    long long synth_val_scenes = 0;
    long long synth_points = 20000;
    double synth_extent = 8.0;
    double synth_noise = 0.01;
    long long max_scans = 0; // cap scans per split (0 = all)
    std::string crop_min;    // "x,y,z" or empty
    std::string crop_max;

    // io
    std::string checkpoint = "pcscnet.ckpt";
    std::string resume;
    std::string report = "report";
    std::string log_file;
    std::string out_dir = "synth_out"; // make-synth target
    std::string ply_out = ".";
    std::string ply_format = "binary"; // binary | ascii
    std::string ply_mode = "labels";   // labels | error

    // bench
    long long bench_grid = 64;
    double bench_occupancy = 0.02;
    long long bench_scans = 10;
    long long bench_channels = 8;

    // ablation
    std::string sizes = "0.1,0.3";
    long long ablate_seeds = 3;
    long long ablate_epochs = 0; // 0 = use epochs

    // gradcheck
    long long gradcheck_fault = 0;

    long long threads = 0; // 0 = runtime default

    void set(const std::string& key, const std::string& value);
    std::string get(const std::string& key) const;
    void load_file(const std::string& path);
    std::string echo() const; // every key=value, sorted, for the run log
    static std::vector<std::string> known_keys();

    ModelConfig model_config() const;
    LossConfig loss_config() const;
    void validate() const;
};

std::vector<double> parse_double_list(const std::string& csv, const std::string& who);
std::vector<std::string> parse_string_list(const std::string& csv);

} // namespace pcsc
