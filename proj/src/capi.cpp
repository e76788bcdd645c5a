#include "pcscnet/pcscnet.h"

#include <cstring>
#include <stdexcept>
#include <string>

#include "pcscnet/config.hpp"
#include "pcscnet/model.hpp"
#include "pcscnet/runner.hpp"

struct pcsc_config {
    pcsc::RunConfig cfg;
};

struct pcsc_model {
    pcsc::ModelConfig cfg;
    pcsc::Model model;

    explicit pcsc_model(const pcsc::ModelConfig& mc) : cfg(mc), model(mc) {}
};

namespace {

thread_local std::string g_last_error;

pcsc_status fail(pcsc_status code, const std::string& message) {
    g_last_error = message;
    return code;
}

pcsc_status classify_exception() {
    try {
        throw;
    } catch (const std::invalid_argument& e) {
        const std::string what = e.what();
        return fail(what.rfind("config:", 0) == 0 ? PCSC_ERROR_CONFIG : PCSC_ERROR_INVALID_ARGUMENT, what);
    } catch (const std::runtime_error& e) {
        const std::string what = e.what();
        if (what.find("cannot open") != std::string::npos || what.find("write failed") != std::string::npos ||
            what.find("truncated") != std::string::npos || what.find("missing") != std::string::npos)
            return fail(PCSC_ERROR_IO, what);
        if (what.find("non-finite") != std::string::npos) return fail(PCSC_ERROR_NUMERIC, what);
        return fail(PCSC_ERROR_INTERNAL, what);
    } catch (const std::exception& e) {
        return fail(PCSC_ERROR_INTERNAL, e.what());
    } catch (...) {
        return fail(PCSC_ERROR_INTERNAL, "unknown error");
    }
}

template <typename Fn>
pcsc_status guarded(Fn&& fn) {
    try {
        fn();
        g_last_error.clear();
        return PCSC_OK;
    } catch (...) {
        return classify_exception();
    }
}

} // namespace

extern "C" {

const char* pcsc_version(void) { return "1.0.0"; }

const char* pcsc_status_name(pcsc_status status) {
    switch (status) {
        case PCSC_OK: return "ok";
        case PCSC_ERROR_INVALID_ARGUMENT: return "invalid_argument";
        case PCSC_ERROR_CONFIG: return "config";
        case PCSC_ERROR_IO: return "io";
        case PCSC_ERROR_NUMERIC: return "numeric";
        case PCSC_ERROR_INTERNAL: return "internal";
    }
    return "unknown";
}

const char* pcsc_last_error(void) { return g_last_error.c_str(); }

pcsc_status pcsc_config_create(pcsc_config** out) {
    if (!out) return fail(PCSC_ERROR_INVALID_ARGUMENT, "pcsc_config_create: out is NULL");
    return guarded([&] { *out = new pcsc_config(); });
}

void pcsc_config_destroy(pcsc_config* cfg) { delete cfg; }

pcsc_status pcsc_config_load_file(pcsc_config* cfg, const char* path) {
    if (!cfg || !path) return fail(PCSC_ERROR_INVALID_ARGUMENT, "pcsc_config_load_file: NULL argument");
    return guarded([&] { cfg->cfg.load_file(path); });
}

pcsc_status pcsc_config_set(pcsc_config* cfg, const char* key, const char* value) {
    if (!cfg || !key || !value) return fail(PCSC_ERROR_INVALID_ARGUMENT, "pcsc_config_set: NULL argument");
    return guarded([&] { cfg->cfg.set(key, value); });
}

pcsc_status pcsc_config_get(const pcsc_config* cfg, const char* key, char* buf, size_t cap) {
    if (!cfg || !key || !buf) return fail(PCSC_ERROR_INVALID_ARGUMENT, "pcsc_config_get: NULL argument");
    return guarded([&] {
        const std::string v = cfg->cfg.get(key);
        if (v.size() + 1 > cap) throw std::invalid_argument("pcsc_config_get: buffer too small");
        std::memcpy(buf, v.c_str(), v.size() + 1);
    });
}

pcsc_status pcsc_run_make_synth(const pcsc_config* cfg) {
    if (!cfg) return fail(PCSC_ERROR_INVALID_ARGUMENT, "pcsc_run_make_synth: cfg is NULL");
    return guarded([&] { pcsc::cmd_make_synth(cfg->cfg); });
}

pcsc_status pcsc_run_train(const pcsc_config* cfg) {
    if (!cfg) return fail(PCSC_ERROR_INVALID_ARGUMENT, "pcsc_run_train: cfg is NULL");
    return guarded([&] { pcsc::cmd_train(cfg->cfg); });
}

pcsc_status pcsc_run_eval(const pcsc_config* cfg) {
    if (!cfg) return fail(PCSC_ERROR_INVALID_ARGUMENT, "pcsc_run_eval: cfg is NULL");
    return guarded([&] { pcsc::cmd_eval(cfg->cfg); });
}

pcsc_status pcsc_run_infer(const pcsc_config* cfg) {
    if (!cfg) return fail(PCSC_ERROR_INVALID_ARGUMENT, "pcsc_run_infer: cfg is NULL");
    return guarded([&] { pcsc::cmd_infer(cfg->cfg); });
}

pcsc_status pcsc_run_ablate_voxel(const pcsc_config* cfg) {
    if (!cfg) return fail(PCSC_ERROR_INVALID_ARGUMENT, "pcsc_run_ablate_voxel: cfg is NULL");
    return guarded([&] { pcsc::cmd_ablate_voxel(cfg->cfg); });
}

pcsc_status pcsc_run_ablate_loss(const pcsc_config* cfg) {
    if (!cfg) return fail(PCSC_ERROR_INVALID_ARGUMENT, "pcsc_run_ablate_loss: cfg is NULL");
    return guarded([&] { pcsc::cmd_ablate_loss(cfg->cfg); });
}

pcsc_status pcsc_run_bench(const pcsc_config* cfg) {
    if (!cfg) return fail(PCSC_ERROR_INVALID_ARGUMENT, "pcsc_run_bench: cfg is NULL");
    return guarded([&] { pcsc::cmd_bench(cfg->cfg); });
}

pcsc_status pcsc_run_gradcheck(const pcsc_config* cfg) {
    if (!cfg) return fail(PCSC_ERROR_INVALID_ARGUMENT, "pcsc_run_gradcheck: cfg is NULL");
    pcsc_status status = PCSC_OK;
    std::string failing;
    const pcsc_status run = guarded([&] {
        pcsc::GradcheckOutcome outcome = pcsc::cmd_gradcheck(cfg->cfg);
        if (!outcome.pass) {
            for (const auto& [name, err] : outcome.components)
                if (!(err < 1e-5)) failing += (failing.empty() ? "" : ", ") + name;
            status = PCSC_ERROR_NUMERIC;
        }
    });
    if (run != PCSC_OK) return run;
    if (status != PCSC_OK) return fail(status, "gradcheck failed: " + failing);
    return PCSC_OK;
}

pcsc_status pcsc_model_load(const char* checkpoint_path, const pcsc_config* cfg, pcsc_model** out) {
    if (!checkpoint_path || !cfg || !out)
        return fail(PCSC_ERROR_INVALID_ARGUMENT, "pcsc_model_load: NULL argument");
    return guarded([&] {
        auto* handle = new pcsc_model(cfg->cfg.model_config());
        try {
            handle->model.load(checkpoint_path);
        } catch (...) {
            delete handle;
            throw;
        }
        *out = handle;
    });
}

void pcsc_model_destroy(pcsc_model* model) { delete model; }

pcsc_status pcsc_model_num_classes(const pcsc_model* model, int* out) {
    if (!model || !out) return fail(PCSC_ERROR_INVALID_ARGUMENT, "pcsc_model_num_classes: NULL argument");
    *out = model->cfg.classes;
    return PCSC_OK;
}

pcsc_status pcsc_model_infer(const pcsc_model* model, const double* xyz, const double* intensity, size_t n_points,
                             int* labels_out) {
    if (!model || !xyz || !labels_out || n_points == 0)
        return fail(PCSC_ERROR_INVALID_ARGUMENT, "pcsc_model_infer: NULL argument or empty input");
    return guarded([&] {
        pcsc::PointCloud cloud;
        cloud.xyz = pcsc::Matrix(int(n_points), 3);
        std::memcpy(cloud.xyz.v.data(), xyz, n_points * 3 * sizeof(double));
        if (intensity) cloud.intensity.assign(intensity, intensity + n_points);
        pcsc::Scan scan = pcsc::prepare_scan(std::move(cloud), model->cfg.voxel_size, model->cfg.use_intensity, 0);
        pcsc::ForwardContext ctx;
        pcsc::Matrix probs = model->model.forward(scan, ctx);
        const std::vector<int> pred = pcsc::predict(probs);
        for (size_t i = 0; i < n_points; ++i) labels_out[i] = pred[i];
    });
}

} // extern "C"
