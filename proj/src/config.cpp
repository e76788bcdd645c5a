#include "pcscnet/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

namespace pcsc {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

struct Binding {
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return d;
    } catch (...) {
        throw std::invalid_argument("config: key '" + key + "' expects a number, got '" + v + "'");
    }
}

long long to_int(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const long long i = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return i;
    } catch (...) {
        throw std::invalid_argument("config: key '" + key + "' expects an integer, got '" + v + "'");
    }
}

std::string fmt_double(double d) {
    std::ostringstream os;
    os.precision(15);
    os << d;
    return os.str();
}

const std::map<std::string, Binding>& bindings() {
    static const std::map<std::string, Binding> table = [] {
        std::map<std::string, Binding> t;
        auto dbl = [&t](const std::string& k, double RunConfig::* f) {
            t[k] = {[k, f](RunConfig& c, const std::string& v) { c.*f = to_double(k, v); },
                    [f](const RunConfig& c) { return fmt_double(c.*f); }};
        };
        auto intg = [&t](const std::string& k, long long RunConfig::* f) {
            t[k] = {[k, f](RunConfig& c, const std::string& v) { c.*f = to_int(k, v); },
                    [f](const RunConfig& c) { return std::to_string(c.*f); }};
        };
        auto str = [&t](const std::string& k, std::string RunConfig::* f) {
            t[k] = {[f](RunConfig& c, const std::string& v) { c.*f = v; },
                    [f](const RunConfig& c) { return c.*f; }};
        };
        dbl("voxel_size", &RunConfig::voxel_size);
        intg("kernel_points", &RunConfig::kernel_points);
        intg("mlp_layers", &RunConfig::mlp_layers);
        intg("extract_width", &RunConfig::extract_width);
        str("unet_widths", &RunConfig::unet_widths);
        intg("decoder_width", &RunConfig::decoder_width);
        intg("head_hidden", &RunConfig::head_hidden);
        intg("classes", &RunConfig::classes);
        intg("use_intensity", &RunConfig::use_intensity);
        dbl("w_ce", &RunConfig::w_ce);
        dbl("w_pa", &RunConfig::w_pa);
        intg("knn_k", &RunConfig::knn_k);
        intg("epochs", &RunConfig::epochs);
        dbl("lr", &RunConfig::lr);
        dbl("beta1", &RunConfig::beta1);
        dbl("beta2", &RunConfig::beta2);
        dbl("adam_eps", &RunConfig::adam_eps);
        intg("seed", &RunConfig::seed);
        dbl("early_stop_acc", &RunConfig::early_stop_acc);
        str("data", &RunConfig::data);
        str("data_dir", &RunConfig::data_dir);
        str("remap", &RunConfig::remap);
        str("sequences_train", &RunConfig::sequences_train);
        str("sequences_val", &RunConfig::sequences_val);
        intg("synth_scenes", &RunConfig::synth_scenes);
        intg("synth_val_scenes", &RunConfig::synth_val_scenes);
        intg("synth_points", &RunConfig::synth_points);
        dbl("synth_extent", &RunConfig::synth_extent);
        dbl("synth_noise", &RunConfig::synth_noise);
        intg("max_scans", &RunConfig::max_scans);
        str("crop_min", &RunConfig::crop_min);
        str("crop_max", &RunConfig::crop_max);
        str("checkpoint", &RunConfig::checkpoint);
        str("resume", &RunConfig::resume);
        str("report", &RunConfig::report);
        str("log_file", &RunConfig::log_file);
        str("out_dir", &RunConfig::out_dir);
        str("ply_out", &RunConfig::ply_out);
        str("ply_format", &RunConfig::ply_format);
        str("ply_mode", &RunConfig::ply_mode);
        intg("bench_grid", &RunConfig::bench_grid);
        dbl("bench_occupancy", &RunConfig::bench_occupancy);
        intg("bench_scans", &RunConfig::bench_scans);
        intg("bench_channels", &RunConfig::bench_channels);
        str("sizes", &RunConfig::sizes);
        intg("ablate_seeds", &RunConfig::ablate_seeds);
        intg("ablate_epochs", &RunConfig::ablate_epochs);
        intg("gradcheck_fault", &RunConfig::gradcheck_fault);
        intg("threads", &RunConfig::threads);
        return t;
    }();
    return table;
}

} // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
    auto it = bindings().find(key);
    if (it == bindings().end()) throw std::invalid_argument("config: unknown key '" + key + "'");
    it->second.set(*this, value);
}

std::string RunConfig::get(const std::string& key) const {
    auto it = bindings().find(key);
    if (it == bindings().end()) throw std::invalid_argument("config: unknown key '" + key + "'");
    return it->second.get(*this);
}

void RunConfig::load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("config: line " + std::to_string(lineno) + " of " + path +
                                     " is not 'key = value'");
        set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
}

std::string RunConfig::echo() const {
    std::ostringstream os;
    for (const auto& [key, binding] : bindings()) os << key << "=" << binding.get(*this) << "\n";
    return os.str();
}

std::vector<std::string> RunConfig::known_keys() {
    std::vector<std::string> keys;
    for (const auto& [key, _] : bindings()) keys.push_back(key);
    return keys;
}

std::vector<double> parse_double_list(const std::string& csv, const std::string& who) {
    std::vector<double> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        out.push_back(to_double(who, item));
    }
    return out;
}

std::vector<std::string> parse_string_list(const std::string& csv) {
    std::vector<std::string> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

ModelConfig RunConfig::model_config() const {
    ModelConfig mc;
    mc.voxel_size = voxel_size;
    mc.kernel_points = int(kernel_points);
    mc.mlp_layers = int(mlp_layers);
    mc.extract_width = int(extract_width);
    const auto widths = parse_double_list(unet_widths, "unet_widths");
    if (widths.size() != 3) throw std::invalid_argument("config: unet_widths must have exactly 3 entries");
    mc.unet_widths = {int(widths[0]), int(widths[1]), int(widths[2])};
    mc.decoder_width = int(decoder_width);
    mc.head_hidden = int(head_hidden);
    mc.classes = int(classes);
    mc.use_intensity = use_intensity != 0;
    mc.seed = uint64_t(seed);
    return mc;
}

LossConfig RunConfig::loss_config() const {
    LossConfig lc;
    lc.w_ce = w_ce;
    lc.w_pa = w_pa;
    lc.k = int(knn_k);
    return lc;
}

void RunConfig::validate() const {
    model_config().validate();
    if (w_ce < 0.0 || w_pa < 0.0) throw std::invalid_argument("config: w_ce and w_pa must be >= 0");
    if (knn_k < 1) throw std::invalid_argument("config: knn_k must be >= 1");
    if (epochs < 0) throw std::invalid_argument("config: epochs must be >= 0");
    if (data != "synth" && data != "dir" && data != "kitti")
        throw std::invalid_argument("config: data must be synth, dir or kitti");
    if (ply_format != "binary" && ply_format != "ascii")
        throw std::invalid_argument("config: ply_format must be binary or ascii");
    if (ply_mode != "labels" && ply_mode != "error")
        throw std::invalid_argument("config: ply_mode must be labels or error");
}

} // namespace pcsc
