#include "pcscnet/runner.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <memory>
#include <random>
#include <sstream>
#include <stdexcept>

#include "pcscnet/checkpoint.hpp"
#include "pcscnet/dataio.hpp"
#include "pcscnet/dense_oracle.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fs = std::filesystem;

namespace pcsc {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

uint64_t mix64(uint64_t a, uint64_t b) {
    uint64_t x = a + 0x9e3779b97f4a7c15ull * (b + 1);
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ull;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebull;
    x ^= x >> 31;
    return x;
}

void apply_threads(const RunConfig& cfg) {
#ifdef _OPENMP
    if (cfg.threads > 0) omp_set_num_threads(int(cfg.threads));
#else
    (void)cfg;
#endif
}

// Mirrors lines to stdout and optionally a log file.
struct LogSink {
    std::ofstream file;

    explicit LogSink(const std::string& path) {
        if (!path.empty()) {
            file.open(path, std::ios::trunc);
            if (!file) throw std::runtime_error("log: cannot open " + path);
        }
    }
    void line(const std::string& s) {
        std::cout << s << "\n";
        if (file.is_open()) file << s << "\n";
    }
};

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("report: cannot open " + path);
    out << text;
}

void apply_crop(PointCloud& cloud, const RunConfig& cfg) {
    if (cfg.crop_min.empty() && cfg.crop_max.empty()) return;
    const auto lo = parse_double_list(cfg.crop_min, "crop_min");
    const auto hi = parse_double_list(cfg.crop_max, "crop_max");
    if (lo.size() != 3 || hi.size() != 3)
        throw std::invalid_argument("config: crop_min/crop_max must both be x,y,z");
    std::vector<int> keep;
    for (int p = 0; p < cloud.size(); ++p) {
        const double* xyz = cloud.xyz.row(p);
        bool in = true;
        for (int a = 0; a < 3; ++a)
            if (xyz[a] < lo[a] || xyz[a] > hi[a]) in = false;
        if (in) keep.push_back(p);
    }
    if (keep.empty()) throw std::runtime_error("crop: no points left after cropping");
    PointCloud out;
    out.xyz = Matrix(int(keep.size()), 3);
    for (int i = 0; i < int(keep.size()); ++i)
        for (int a = 0; a < 3; ++a) out.xyz.at(i, a) = cloud.xyz.at(keep[i], a);
    if (cloud.has_intensity()) {
        out.intensity.resize(keep.size());
        for (std::size_t i = 0; i < keep.size(); ++i) out.intensity[i] = cloud.intensity[keep[i]];
    }
    if (cloud.has_labels()) {
        out.labels.resize(keep.size());
        for (std::size_t i = 0; i < keep.size(); ++i) out.labels[i] = cloud.labels[keep[i]];
    }
    cloud = std::move(out);
}

SceneSpec scene_spec_from(const RunConfig& cfg, uint64_t seed) {
    SceneSpec spec;
    spec.extent = cfg.synth_extent;
    spec.target_points = int(cfg.synth_points);
    spec.noise_sigma = cfg.synth_noise;
    spec.seed = seed;
    return spec;
}

RemapTable remap_from(const RunConfig& cfg) {
    if (cfg.remap == "identity") return RemapTable::identity_table();
    return RemapTable::from_file(cfg.remap);
}

} // namespace

std::vector<Scan> load_scans(const RunConfig& cfg, bool val_split) {
    const int knn_k = int(cfg.knn_k);
    std::vector<Scan> scans;

    if (cfg.data == "synth") {
        const long long count = val_split ? cfg.synth_val_scenes : cfg.synth_scenes;
        for (long long i = 0; i < count; ++i) {
            const uint64_t seed = mix64(uint64_t(cfg.seed), uint64_t(i) + (val_split ? 0x8000u : 0u));
            PointCloud cloud = generate_scene(scene_spec_from(cfg, seed));
            apply_crop(cloud, cfg);
            scans.push_back(prepare_scan(std::move(cloud), cfg.voxel_size, cfg.use_intensity != 0, knn_k));
        }
        return scans;
    }

    std::vector<ScanPaths> paths;
    const RemapTable remap = remap_from(cfg);
    if (cfg.data == "dir") {
        if (val_split) return scans;
        paths = list_scan_dir(cfg.data_dir);
    } else { // kitti
        DatasetSplit split = split_sequences(cfg.data_dir, parse_string_list(cfg.sequences_train),
                                             parse_string_list(cfg.sequences_val));
        paths = val_split ? std::move(split.val) : std::move(split.train);
    }
    if (cfg.max_scans > 0 && (long long)(paths.size()) > cfg.max_scans) paths.resize(std::size_t(cfg.max_scans));
    for (const auto& sp : paths) {
        PointCloud cloud = read_scan(sp.bin_path, sp.label_path, remap);
        apply_crop(cloud, cfg);
        const int k = cloud.has_labels() ? knn_k : 0;
        scans.push_back(prepare_scan(std::move(cloud), cfg.voxel_size, cfg.use_intensity != 0, k));
    }
    return scans;
}

EvalStats evaluate_scans(const Model& model, const std::vector<Scan>& scans, int classes) {
    EvalStats stats;
    stats.report.confusion = ConfusionMatrix(classes);
    ConfusionMatrix& cm = stats.report.confusion;
    long long points = 0;
    const auto t0 = Clock::now();
    for (const Scan& scan : scans) {
        ForwardContext ctx;
        Matrix probs = model.forward(scan, ctx);
        const std::vector<int> pred = predict(probs);
        points += scan.cloud.size();
        for (int p = 0; p < scan.cloud.size(); ++p) {
            const int t = scan.cloud.labels.empty() ? kIgnoreLabel : scan.cloud.labels[p];
            cm.add(t, pred[p]);
            if (t >= 0 && !scan.boundary.n_diff.empty() && scan.boundary.n_diff[p] > 0) {
                ++stats.boundary_total;
                if (pred[p] == t) ++stats.boundary_correct;
            }
        }
    }
    const double secs = ms_since(t0) / 1000.0;
    const double pps = secs > 0 ? double(points) / secs : 0.0;
    const double sps = secs > 0 ? double(scans.size()) / secs : 0.0;
    const auto boundary_correct = stats.boundary_correct;
    const auto boundary_total = stats.boundary_total;
    stats.report = make_report(cm, pps, sps);
    stats.boundary_correct = boundary_correct;
    stats.boundary_total = boundary_total;
    return stats;
}

void cmd_make_synth(const RunConfig& cfg) {
    apply_threads(cfg);
    cfg.validate();
    fs::create_directories(cfg.out_dir);
    for (long long i = 0; i < cfg.synth_scenes; ++i) {
        const uint64_t seed = mix64(uint64_t(cfg.seed), uint64_t(i));
        PointCloud cloud = generate_scene(scene_spec_from(cfg, seed));
        char name[32];
        std::snprintf(name, sizeof(name), "scan_%04lld", i);
        const fs::path base = fs::path(cfg.out_dir) / name;
        write_scan(base.string() + ".bin", base.string() + ".label", cloud);
        std::cout << "wrote " << base.string() << ".bin (" << cloud.size() << " points)\n";
    }
}

namespace {

struct AdamCheckpointNames {
    static std::string m(const std::string& p) { return "adam.m." + p; }
    static std::string v(const std::string& p) { return "adam.v." + p; }
};

void save_train_state(const std::string& path, const Model& model, const AdamState& adam, int epoch) {
    std::vector<Param> extras;
    for (const Param* p : model.params()) {
        const auto it = adam.slots.find(p->name);
        if (it == adam.slots.end()) continue;
        extras.emplace_back(AdamCheckpointNames::m(p->name), it->second.m);
        extras.emplace_back(AdamCheckpointNames::v(p->name), it->second.v);
    }
    Matrix t(1, 1);
    t.v[0] = double(adam.t);
    extras.emplace_back("adam.t", t);
    Matrix ep(1, 1);
    ep.v[0] = double(epoch);
    extras.emplace_back("train.epoch", ep);
    std::vector<const Param*> extra_ptrs;
    for (const auto& e : extras) extra_ptrs.push_back(&e);
    model.save(path, extra_ptrs);
}

// Returns the epoch stored in the checkpoint (0 when absent).
int load_train_state(const std::string& path, Model& model, AdamState& adam) {
    std::vector<Param> extras = model.load(path);
    int epoch = 0;
    for (const Param* p : model.params()) {
        auto slot = adam.slots.find(p->name);
        if (slot == adam.slots.end()) continue;
        for (const auto& e : extras) {
            if (e.name == AdamCheckpointNames::m(p->name)) slot->second.m = e.value;
            if (e.name == AdamCheckpointNames::v(p->name)) slot->second.v = e.value;
        }
    }
    for (const auto& e : extras) {
        if (e.name == "adam.t") adam.t = (long long)(std::llround(e.value.v[0]));
        if (e.name == "train.epoch") epoch = int(std::lround(e.value.v[0]));
    }
    return epoch;
}

TrainOutcome run_training(const RunConfig& cfg, Model& model, const std::vector<Scan>& train,
                          const std::vector<Scan>& val, LogSink* log) {
    AdamState adam;
    adam.lr = cfg.lr;
    adam.beta1 = cfg.beta1;
    adam.beta2 = cfg.beta2;
    adam.eps = cfg.adam_eps;
    adam.register_params(model.params());

    int start_epoch = 0;
    if (!cfg.resume.empty()) start_epoch = load_train_state(cfg.resume, model, adam);

    const LossConfig loss_cfg = cfg.loss_config();
    TrainOutcome outcome;
    outcome.best_val_miou = -1.0;

    std::vector<int> order(train.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = start_epoch + 1; epoch <= int(cfg.epochs); ++epoch) {
        const auto t0 = Clock::now();
        std::mt19937_64 shuffle_rng(mix64(uint64_t(cfg.seed), 0xe90cull + uint64_t(epoch)));
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        double epoch_loss = 0.0;
        long long correct = 0, labeled = 0;
        for (int idx : order) {
            TrainStepResult r = train_step({&train[idx]}, model, adam, loss_cfg);
            epoch_loss += r.loss;
            correct += r.correct;
            labeled += r.labeled;
        }
        epoch_loss /= double(std::max<std::size_t>(train.size(), 1));
        const double train_acc = labeled > 0 ? double(correct) / double(labeled) : 0.0;

        outcome.epochs_run = epoch;
        outcome.final_loss = epoch_loss;
        outcome.final_train_acc = train_acc;
        outcome.epoch_losses.push_back(epoch_loss);

        std::ostringstream line;
        line.precision(6);
        line << "epoch=" << epoch << " loss=" << epoch_loss << " train_acc=" << train_acc;
        if (!val.empty()) {
            EvalStats vs = evaluate_scans(model, val, int(cfg.classes));
            line << " val_miou=" << vs.report.miou;
            if (vs.report.miou > outcome.best_val_miou) {
                outcome.best_val_miou = vs.report.miou;
                if (!cfg.checkpoint.empty()) save_train_state(cfg.checkpoint + ".best", model, adam, epoch);
            }
        }
        line << " time_s=" << ms_since(t0) / 1000.0;
        if (log) log->line(line.str());

        if (!cfg.checkpoint.empty()) save_train_state(cfg.checkpoint, model, adam, epoch);
        if (cfg.early_stop_acc > 0.0 && train_acc >= cfg.early_stop_acc) break;
    }
    return outcome;
}

} // namespace

TrainOutcome cmd_train(const RunConfig& cfg) {
    apply_threads(cfg);
    cfg.validate();
    LogSink log(cfg.log_file);
    log.line("# run config");
    std::istringstream echo(cfg.echo());
    for (std::string l; std::getline(echo, l);) log.line("# " + l);

    std::vector<Scan> train = load_scans(cfg, false);
    if (train.empty()) throw std::runtime_error("train: no training scans");
    for (const auto& s : train)
        if (!s.cloud.has_labels()) throw std::runtime_error("train: unlabeled scan in training data");
    std::vector<Scan> val = load_scans(cfg, true);

    Model model(cfg.model_config());
    return run_training(cfg, model, train, val, &log);
}

EvalStats cmd_eval(const RunConfig& cfg) {
    apply_threads(cfg);
    cfg.validate();
    std::vector<Scan> scans = load_scans(cfg, cfg.data == "kitti" || cfg.synth_val_scenes > 0);
    if (scans.empty()) scans = load_scans(cfg, false);
    if (scans.empty()) throw std::runtime_error("eval: no scans");
    for (const auto& s : scans)
        if (!s.cloud.has_labels()) throw std::runtime_error("eval: unlabeled scan");

    Model model(cfg.model_config());
    if (cfg.checkpoint.empty()) throw std::runtime_error("eval: checkpoint path required");
    model.load(cfg.checkpoint);

    EvalStats stats = evaluate_scans(model, scans, int(cfg.classes));
    std::vector<std::string> names;
    for (int c = 0; c < int(cfg.classes); ++c) names.push_back("class_" + std::to_string(c));
    const std::string table = format_report_table(stats.report, names);
    std::cout << table;
    write_text_file(cfg.report + ".txt", table);
    write_text_file(cfg.report + ".kv", format_report_kv(stats.report));
    return stats;
}

void cmd_infer(const RunConfig& cfg) {
    apply_threads(cfg);
    cfg.validate();
    std::vector<Scan> scans = load_scans(cfg, false);
    if (scans.empty()) throw std::runtime_error("infer: no scans");

    Model model(cfg.model_config());
    if (cfg.checkpoint.empty()) throw std::runtime_error("infer: checkpoint path required");
    model.load(cfg.checkpoint);

    fs::create_directories(cfg.ply_out);
    const auto palette = default_palette(int(cfg.classes));
    const PlyFormat format = cfg.ply_format == "ascii" ? PlyFormat::ascii : PlyFormat::binary;
    for (std::size_t i = 0; i < scans.size(); ++i) {
        ForwardContext ctx;
        Matrix probs = model.forward(scans[i], ctx);
        const std::vector<int> pred = predict(probs);
        char name[32];
        std::snprintf(name, sizeof(name), "scan_%04zu.ply", i);
        const std::string path = (fs::path(cfg.ply_out) / name).string();
        if (cfg.ply_mode == "error") {
            if (!scans[i].cloud.has_labels()) throw std::runtime_error("infer: error map needs labels");
            export_ply_error_map(path, scans[i].cloud, pred, scans[i].cloud.labels, format);
        } else {
            export_ply(path, scans[i].cloud, pred, palette, format);
        }
        std::cout << "wrote " << path << "\n";
    }
}

AblateVoxelOutcome cmd_ablate_voxel(const RunConfig& cfg) {
    apply_threads(cfg);
    cfg.validate();
    const std::vector<double> sizes = parse_double_list(cfg.sizes, "sizes");
    if (sizes.size() < 2) throw std::invalid_argument("ablate-voxel: need at least 2 sizes");

    AblateVoxelOutcome outcome;
    std::ostringstream kv;
    for (double size : sizes) {
        double miou_sum = 0.0;
        for (long long s = 0; s < cfg.ablate_seeds; ++s) {
            RunConfig run = cfg;
            run.voxel_size = size;
            run.seed = cfg.seed + s;
            run.checkpoint.clear();
            run.resume.clear();
            if (cfg.ablate_epochs > 0) run.epochs = cfg.ablate_epochs;

            std::vector<Scan> train = load_scans(run, false);
            std::vector<Scan> val = load_scans(run, true);
            Model model(run.model_config());
            run_training(run, model, train, val, nullptr);
            EvalStats stats = evaluate_scans(model, val.empty() ? train : val, int(run.classes));
            miou_sum += stats.report.miou;
        }
        const double mean = miou_sum / double(cfg.ablate_seeds);
        outcome.rows.emplace_back(size, mean);
        kv << "miou_at_" << size << "=" << mean << "\n";
    }

    std::ostringstream table;
    table << "voxel_size  mean_miou\n";
    table.precision(4);
    table << std::fixed;
    for (const auto& [size, miou] : outcome.rows) table << size << "      " << miou << "\n";
    std::cout << table.str();
    write_text_file(cfg.report + ".txt", table.str());
    write_text_file(cfg.report + ".kv", kv.str());
    return outcome;
}

AblateLossOutcome cmd_ablate_loss(const RunConfig& cfg) {
    apply_threads(cfg);
    cfg.validate();

    AblateLossOutcome outcome;
    double miou[2] = {0, 0};
    long long bcorrect[2] = {0, 0}, btotal[2] = {0, 0};
    for (int arm = 0; arm < 2; ++arm) {
        for (long long s = 0; s < cfg.ablate_seeds; ++s) {
            RunConfig run = cfg;
            run.w_pa = arm == 0 ? 0.0 : cfg.w_pa;
            run.seed = cfg.seed + s;
            run.checkpoint.clear();
            run.resume.clear();
            if (cfg.ablate_epochs > 0) run.epochs = cfg.ablate_epochs;

            std::vector<Scan> train = load_scans(run, false);
            std::vector<Scan> val = load_scans(run, true);
            Model model(run.model_config());
            run_training(run, model, train, val, nullptr);
            EvalStats stats = evaluate_scans(model, val.empty() ? train : val, int(run.classes));
            miou[arm] += stats.report.miou;
            bcorrect[arm] += stats.boundary_correct;
            btotal[arm] += stats.boundary_total;
        }
        miou[arm] /= double(cfg.ablate_seeds);
    }
    outcome.miou_ce = miou[0];
    outcome.miou_combined = miou[1];
    outcome.boundary_acc_ce = btotal[0] > 0 ? double(bcorrect[0]) / double(btotal[0]) : 0.0;
    outcome.boundary_acc_combined = btotal[1] > 0 ? double(bcorrect[1]) / double(btotal[1]) : 0.0;

    std::ostringstream table;
    table.precision(4);
    table << std::fixed;
    table << "loss          miou    boundary_acc\n";
    table << "ce            " << outcome.miou_ce << "  " << outcome.boundary_acc_ce << "\n";
    table << "ce+pa         " << outcome.miou_combined << "  " << outcome.boundary_acc_combined << "\n";
    std::cout << table.str();
    write_text_file(cfg.report + ".txt", table.str());
    std::ostringstream kv;
    kv << "miou_ce=" << outcome.miou_ce << "\nmiou_combined=" << outcome.miou_combined
       << "\nboundary_acc_ce=" << outcome.boundary_acc_ce
       << "\nboundary_acc_combined=" << outcome.boundary_acc_combined << "\n";
    write_text_file(cfg.report + ".kv", kv.str());
    return outcome;
}

BenchOutcome cmd_bench(const RunConfig& cfg) {
    apply_threads(cfg);
    cfg.validate();
    BenchOutcome out;

    // Stage timing over synthetic scans.
    const long long n_scans = std::max<long long>(cfg.bench_scans, 1);
    std::vector<PointCloud> clouds;
    for (long long i = 0; i < n_scans; ++i)
        clouds.push_back(generate_scene(scene_spec_from(cfg, mix64(uint64_t(cfg.seed), uint64_t(i)))));

    Model model(cfg.model_config());
    double vox_ms = 0, ext_ms = 0, unet_ms = 0, head_ms = 0, total_ms = 0;
    for (const auto& cloud : clouds) {
        const auto t_total = Clock::now();
        auto t0 = Clock::now();
        VoxelMap vmap = voxelize(cloud, cfg.voxel_size);
        Matrix feats = build_input_features(cloud, vmap, cfg.use_intensity != 0);
        vox_ms += ms_since(t0);

        Scan scan;
        scan.cloud = cloud;
        scan.vmap = std::move(vmap);
        scan.feats = std::move(feats);

        t0 = Clock::now();
        ExtractContext ectx;
        ExtractionOutput ex = extract(scan.cloud, scan.vmap, scan.feats, model.lift, model.kernel, ectx);
        ext_ms += ms_since(t0);

        t0 = Clock::now();
        SparseTensor st0 = make_sparse_tensor(scan.vmap.coords, ex.voxel_feats, 1);
        UNet::Ctx uctx;
        SparseTensor y0 = model.unet.forward(st0, uctx);
        unet_ms += ms_since(t0);

        t0 = Clock::now();
        Matrix cat = devoxelize_concat(ex.point_feats, y0.feats, scan.vmap);
        MlpContext hctx;
        Matrix logits = model.head.forward(cat, hctx);
        Matrix probs = softmax_rows(logits);
        (void)probs;
        head_ms += ms_since(t0);
        total_ms += ms_since(t_total);
    }
    out.voxelize_ms = vox_ms / double(n_scans);
    out.extract_ms = ext_ms / double(n_scans);
    out.unet_ms = unet_ms / double(n_scans);
    out.head_ms = head_ms / double(n_scans);
    out.total_ms = total_ms / double(n_scans);
    out.scans_per_sec = 1000.0 / out.total_ms;

    // Sparse vs dense comparison, single-threaded.
#ifdef _OPENMP
    const int saved_threads = omp_get_max_threads();
    omp_set_num_threads(1);
#endif
    {
        std::mt19937_64 rng(mix64(uint64_t(cfg.seed), 0xbe9cull));
        const int dim = int(cfg.bench_grid);
        const int channels = int(cfg.bench_channels);
        const std::size_t cells = std::size_t(dim) * dim * dim;
        const std::size_t target = std::size_t(double(cells) * cfg.bench_occupancy);
        std::vector<VoxelCoord> coords;
        std::unordered_map<uint64_t, bool> seen;
        std::uniform_int_distribution<int> axis(0, dim - 1);
        while (coords.size() < target) {
            VoxelCoord c{axis(rng), axis(rng), axis(rng)};
            if (seen.emplace(pack_coord(c), true).second) coords.push_back(c);
        }
        std::sort(coords.begin(), coords.end());
        Matrix feats(int(coords.size()), channels);
        std::uniform_real_distribution<double> unif(-1.0, 1.0);
        for (auto& v : feats.v) v = unif(rng);
        SparseConv conv("bench", ConvVariant::submanifold, channels, channels, 3, 1, rng);
        SparseTensor st = make_sparse_tensor(coords, feats, 1);

        auto t0 = Clock::now();
        Rulebook rb = build_rulebook_submanifold(st, 3);
        SparseTensor sparse_out = conv.forward(st, rb);
        out.sparse_ms = ms_since(t0);
        (void)sparse_out;

        t0 = Clock::now();
        const double checksum = dense_full_grid_conv(dim, coords, feats, conv.w, conv.b.value, 3);
        out.dense_ms = ms_since(t0);
        if (!std::isfinite(checksum)) throw std::runtime_error("bench: dense oracle checksum non-finite");
        out.sparse_dense_ratio = out.sparse_ms > 0 ? out.dense_ms / out.sparse_ms : 0.0;
    }
#ifdef _OPENMP
    omp_set_num_threads(saved_threads);
#endif

    std::ostringstream kv;
    kv.precision(6);
    kv << "scans_per_sec=" << out.scans_per_sec << "\n";
    kv << "voxelize_ms=" << out.voxelize_ms << "\n";
    kv << "extract_ms=" << out.extract_ms << "\n";
    kv << "unet_ms=" << out.unet_ms << "\n";
    kv << "head_ms=" << out.head_ms << "\n";
    kv << "total_ms=" << out.total_ms << "\n";
    kv << "sparse_ms=" << out.sparse_ms << "\n";
    kv << "dense_ms=" << out.dense_ms << "\n";
    kv << "sparse_dense_ratio=" << out.sparse_dense_ratio << "\n";
    std::cout << kv.str();
    write_text_file(cfg.report + ".kv", kv.str());
    return out;
}

namespace {

// Smallest |pre-activation| across a set of matrices; finite differences
// step across the relu kink when a value sits closer than the probe h.
double relu_margin(std::initializer_list<const Matrix*> preacts) {
    double margin = std::numeric_limits<double>::infinity();
    for (const Matrix* m : preacts)
        for (double v : m->v) margin = std::min(margin, std::fabs(v));
    return margin;
}

// Zero biases leave deep pre-activations clustered at the kink; random biases
// give the check instances usable margins.
void randomize_biases(const std::vector<Param*>& params, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> dist(-0.25, 0.25);
    for (Param* p : params)
        if (p->name.size() > 2 && p->name.compare(p->name.size() - 2, 2, ".b") == 0)
            for (auto& v : p->value.v) v = dist(rng);
}

// Small fixed instances; every component must match finite differences.
GradcheckOutcome run_gradcheck(bool inject_fault) {
    GradcheckOutcome outcome;
    const auto t_start = Clock::now();
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> unif(-1.0, 1.0);
    auto randomize = [&](Matrix& m) {
        for (auto& v : m.v) v = unif(rng);
    };

    auto check = [&](const std::string& name, const std::function<double(bool)>& fn,
                     const std::vector<Param*>& params, double h = 1e-6, double floor = 1e-6) {
        GradCheckReport rep = grad_check(fn, params, h, floor);
        outcome.components.emplace_back(name, rep.max_rel_err);
    };

    // linear
    {
        Linear lin("gc.linear", 4, 2, rng);
        Param x("gc.linear.x", glorot_uniform(3, 4, rng));
        auto fn = [&](bool with_grad) {
            Matrix y = lin.forward(x.value);
            double loss = 0.0;
            for (auto v : y.v) loss += 0.5 * v * v;
            if (with_grad) {
                lin.W.zero_grad();
                lin.b.zero_grad();
                x.zero_grad();
                Matrix dx = lin.backward(x.value, y);
                axpy(1.0, dx, x.grad);
                if (inject_fault)
                    for (auto& g : lin.W.grad.v) g *= 2.0;
            }
            return loss;
        };
        check("linear", fn, {&lin.W, &lin.b, &x});
    }

    // relu (input gradient; values near zero excluded)
    {
        Param x("gc.relu.x", Matrix(3, 5));
        randomize(x.value);
        for (auto& v : x.value.v)
            if (std::fabs(v) < 1e-3) v = 0.1;
        auto fn = [&](bool with_grad) {
            Matrix y = relu(x.value);
            double loss = 0.0;
            for (auto v : y.v) loss += 0.5 * v * v;
            if (with_grad) {
                x.zero_grad();
                Matrix dx = relu_backward(x.value, y);
                axpy(1.0, dx, x.grad);
            }
            return loss;
        };
        check("relu", fn, {&x});
    }

    // scale-shift
    {
        ScaleShift ss("gc.affine", 4);
        randomize(ss.scale.value);
        randomize(ss.shift.value);
        Param x("gc.affine.x", glorot_uniform(3, 4, rng));
        auto fn = [&](bool with_grad) {
            Matrix y = ss.forward(x.value);
            double loss = 0.0;
            for (auto v : y.v) loss += 0.5 * v * v;
            if (with_grad) {
                ss.scale.zero_grad();
                ss.shift.zero_grad();
                x.zero_grad();
                Matrix dx = ss.backward(x.value, y);
                axpy(1.0, dx, x.grad);
            }
            return loss;
        };
        check("scale_shift", fn, {&ss.scale, &ss.shift, &x});
    }

    // softmax + cross entropy
    {
        Param logits("gc.ce.logits", glorot_uniform(5, 3, rng));
        std::vector<int> targets{0, 2, 1, 2, 0};
        auto fn = [&](bool with_grad) {
            Matrix probs = softmax_rows(logits.value);
            LossResult r = cross_entropy(probs, targets);
            if (with_grad) {
                logits.zero_grad();
                axpy(1.0, r.d_logits, logits.grad);
            }
            return r.value;
        };
        check("softmax_ce", fn, {&logits});
    }

    // combined loss (with boundary weights)
    {
        Param logits("gc.pa.logits", glorot_uniform(6, 3, rng));
        std::vector<int> targets{0, 1, 2, 0, 1, 2};
        BoundaryInfo boundary;
        boundary.n_diff = {0, 3, 1, 0, 5, 2};
        LossConfig lc;
        auto fn = [&](bool with_grad) {
            Matrix probs = softmax_rows(logits.value);
            LossResult r = combined_loss(probs, targets, boundary, lc);
            if (with_grad) {
                logits.zero_grad();
                axpy(1.0, r.d_logits, logits.grad);
            }
            return r.value;
        };
        check("combined_loss", fn, {&logits});
    }

    // kpconv extraction on a small cloud; retry seeds until the mlp's relu
    // pre-activations clear the finite-difference step.
    {
        const int n = 30;
        PointCloud cloud;
        Mlp mlp;
        KernelPointSet kernel;
        VoxelMap vmap;
        Matrix feats;
        for (uint64_t attempt = 0;; ++attempt) {
            std::mt19937_64 irng(mix64(41, attempt));
            cloud.xyz = Matrix(n, 3);
            std::uniform_real_distribution<double> pos(0.0, 0.5);
            for (auto& v : cloud.xyz.v) v = pos(irng);
            vmap = voxelize(cloud, 0.2);
            feats = build_input_features(cloud, vmap, false);
            mlp = Mlp("gc.kp.mlp", {4, 6, 6}, irng);
            kernel = make_kernel_point_set("gc.kp", 9, 0.2, 6, irng);
            ExtractContext probe;
            extract(cloud, vmap, feats, mlp, kernel, probe);
            if (relu_margin({&probe.mlp.preacts[0]}) > 1e-3 || attempt > 64) break;
        }
        std::vector<Param*> params;
        mlp.collect(params);
        kernel.collect(params);
        auto fn = [&](bool with_grad) {
            ExtractContext ctx;
            ExtractionOutput out = extract(cloud, vmap, feats, mlp, kernel, ctx);
            double loss = 0.0;
            for (auto v : out.point_feats.v) loss += 0.5 * v * v;
            for (auto v : out.voxel_feats.v) loss += 0.5 * v * v;
            if (with_grad) {
                for (Param* p : params) p->zero_grad();
                extract_backward(vmap, mlp, kernel, ctx, out.point_feats, out.voxel_feats);
            }
            return loss;
        };
        check("kpconv_extract", fn, params, 1e-5, 1e-4);
    }

    // sparse conv variants on a 10-site tensor
    {
        std::vector<VoxelCoord> coords;
        std::unordered_map<uint64_t, bool> seen;
        std::uniform_int_distribution<int> axis(0, 4);
        while (coords.size() < 10) {
            VoxelCoord c{axis(rng), axis(rng), axis(rng)};
            if (seen.emplace(pack_coord(c), true).second) coords.push_back(c);
        }
        std::sort(coords.begin(), coords.end());
        Param x("gc.sc.x", glorot_uniform(10, 3, rng));

        auto conv_check = [&](const std::string& name, ConvVariant variant) {
            SparseConv conv("gc." + name, variant, 3, 4, 3, 2, rng);
            std::vector<Param*> params;
            conv.collect(params);
            params.push_back(&x);
            auto fn = [&, variant](bool with_grad) {
                SparseTensor st = make_sparse_tensor(coords, x.value, 1);
                Rulebook rb;
                if (variant == ConvVariant::submanifold)
                    rb = build_rulebook_submanifold(st, 3);
                else if (variant == ConvVariant::strided)
                    rb = build_rulebook_strided(st, 3, 2);
                else
                    rb = build_rulebook_deconv(build_rulebook_strided(st, 3, 2));
                double loss = 0.0;
                Matrix upstream;
                if (variant == ConvVariant::deconv) {
                    // Drive the deconv from the coarse side.
                    SparseTensor coarse = make_sparse_tensor(rb.in_coords, Matrix(int(rb.in_coords.size()), 3), 2);
                    for (int i = 0; i < coarse.feats.rows; ++i)
                        for (int j = 0; j < 3; ++j) coarse.feats.at(i, j) = x.value.at(i % x.value.rows, j);
                    SparseTensor out = conv.forward(coarse, rb);
                    for (auto v : out.feats.v) loss += 0.5 * v * v;
                    if (with_grad) {
                        for (Param* p : params) p->zero_grad();
                        Matrix d_in = conv.backward(coarse.feats, rb, out.feats);
                        for (int i = 0; i < d_in.rows; ++i)
                            for (int j = 0; j < 3; ++j) x.grad.at(i % x.value.rows, j) += d_in.at(i, j);
                    }
                    return loss;
                }
                SparseTensor out = conv.forward(st, rb);
                for (auto v : out.feats.v) loss += 0.5 * v * v;
                if (with_grad) {
                    for (Param* p : params) p->zero_grad();
                    Matrix d_in = conv.backward(st.feats, rb, out.feats);
                    axpy(1.0, d_in, x.grad);
                }
                return loss;
            };
            check(name, fn, params);
        };
        conv_check("submanifold_conv", ConvVariant::submanifold);
        conv_check("strided_conv", ConvVariant::strided);
        conv_check("deconv", ConvVariant::deconv);

        // residual block; screen for relu margin
        {
            ResidualBlock block;
            for (uint64_t attempt = 0;; ++attempt) {
                std::mt19937_64 irng(mix64(43, attempt));
                block = ResidualBlock("gc.res", 3, 3, irng);
                std::vector<Param*> bias_probe;
                block.collect(bias_probe);
                randomize_biases(bias_probe, irng);
                SparseTensor st = make_sparse_tensor(coords, x.value, 1);
                Rulebook rb = build_rulebook_submanifold(st, 3);
                ResidualBlock::Ctx probe;
                block.forward(st, rb, probe);
                if (relu_margin({&probe.z_a, &probe.z_b}) > 1e-3 || attempt > 64) break;
            }
            std::vector<Param*> params;
            block.collect(params);
            params.push_back(&x);
            auto fn = [&](bool with_grad) {
                SparseTensor st = make_sparse_tensor(coords, x.value, 1);
                Rulebook rb = build_rulebook_submanifold(st, 3);
                ResidualBlock::Ctx ctx;
                SparseTensor out = block.forward(st, rb, ctx);
                double loss = 0.0;
                for (auto v : out.feats.v) loss += 0.5 * v * v;
                if (with_grad) {
                    for (Param* p : params) p->zero_grad();
                    Matrix d_in = block.backward(ctx, rb, out.feats);
                    axpy(1.0, d_in, x.grad);
                }
                return loss;
            };
            check("residual_block", fn, params);
        }

        // tiny unet; screen for relu margin across all residual stages
        {
            UNetConfig ucfg;
            ucfg.in_width = 3;
            ucfg.enc_widths = {3, 4, 5};
            ucfg.out_width = 3;
            UNet unet;
            for (uint64_t attempt = 0;; ++attempt) {
                std::mt19937_64 irng(mix64(47, attempt));
                unet = UNet("gc.unet", ucfg, irng);
                std::vector<Param*> bias_probe;
                unet.collect(bias_probe);
                randomize_biases(bias_probe, irng);
                SparseTensor st = make_sparse_tensor(coords, x.value, 1);
                UNet::Ctx probe;
                unet.forward(st, probe);
                const double margin = relu_margin({&probe.r1.z_a, &probe.r1.z_b, &probe.r2.z_a, &probe.r2.z_b,
                                                   &probe.r3.z_a, &probe.r3.z_b});
                if (margin > 1e-3 || attempt > 64) break;
            }
            std::vector<Param*> params;
            unet.collect(params);
            params.push_back(&x);
            auto fn = [&](bool with_grad) {
                SparseTensor st = make_sparse_tensor(coords, x.value, 1);
                UNet::Ctx ctx;
                SparseTensor out = unet.forward(st, ctx);
                double loss = 0.0;
                for (auto v : out.feats.v) loss += 0.5 * v * v;
                if (with_grad) {
                    for (Param* p : params) p->zero_grad();
                    Matrix d_in = unet.backward(ctx, out.feats);
                    axpy(1.0, d_in, x.grad);
                }
                return loss;
            };
            check("unet", fn, params, 1e-5, 1e-4);
        }
    }

    // full model with the combined loss on a small synthetic cloud
    {
        SceneSpec spec;
        spec.extent = 2.0;
        spec.target_points = 40;
        spec.noise_sigma = 0.0;
        spec.n_buildings = 1;
        spec.n_cars = 1;
        spec.n_poles = 1;
        spec.n_blobs = 1;

        ModelConfig mc;
        mc.voxel_size = 0.25;
        mc.kernel_points = 9;
        mc.mlp_layers = 1;
        mc.extract_width = 5;
        mc.unet_widths = {5, 6, 7};
        mc.decoder_width = 5;
        mc.head_hidden = 6;
        mc.classes = 5;

        Scan scan;
        std::unique_ptr<Model> model;
        for (uint64_t attempt = 0;; ++attempt) {
            spec.seed = mix64(53, attempt);
            mc.seed = mix64(59, attempt);
            model = std::make_unique<Model>(mc);
            std::mt19937_64 brng(mix64(61, attempt));
            randomize_biases(model->params(), brng);
            scan = prepare_scan(generate_scene(spec), mc.voxel_size, true, 5);
            ForwardContext probe;
            model->forward(scan, probe);
            double margin = relu_margin({&probe.unet.r1.z_a, &probe.unet.r1.z_b, &probe.unet.r2.z_a,
                                         &probe.unet.r2.z_b, &probe.unet.r3.z_a, &probe.unet.r3.z_b});
            for (const auto& z : probe.head.preacts) margin = std::min(margin, relu_margin({&z}));
            if (margin > 1e-3 || attempt > 64) break;
        }
        LossConfig lc;
        auto params = model->params();
        auto fn = [&](bool with_grad) {
            ForwardContext ctx;
            Matrix probs = model->forward(scan, ctx);
            LossResult r = combined_loss(probs, scan.cloud.labels, scan.boundary, lc);
            if (with_grad) {
                model->zero_grads();
                model->backward(scan, ctx, r.d_logits);
            }
            return r.value;
        };
        check("full_model", fn, params, 1e-5, 1e-4);
    }

    outcome.pass = true;
    for (const auto& [name, err] : outcome.components)
        if (!(err < 1e-5)) outcome.pass = false;
    outcome.seconds = ms_since(t_start) / 1000.0;
    return outcome;
}

} // namespace

GradcheckOutcome cmd_gradcheck(const RunConfig& cfg) {
    apply_threads(cfg);
    GradcheckOutcome outcome = run_gradcheck(cfg.gradcheck_fault != 0);
    for (const auto& [name, err] : outcome.components) {
        std::ostringstream line;
        line.precision(3);
        line << std::scientific << "component=" << name << " max_rel_err=" << err
             << " status=" << (err < 1e-5 ? "pass" : "FAIL");
        std::cout << line.str() << "\n";
    }
    std::cout << "gradcheck " << (outcome.pass ? "pass" : "FAIL") << " time_s=" << outcome.seconds << "\n";
    return outcome;
}

} // namespace pcsc
