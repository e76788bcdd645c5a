// Command line front end. Talks to the engine exclusively through the
// shared-library C API.
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "pcscnet/pcscnet.h"

namespace {

const char* kUsage =
    "usage: pcscnet <command> [--config FILE] [--<key> <value> ...]\n"
    "\n"
    "commands:\n"
    "  make-synth    write synthetic scans (.bin/.label) into out_dir\n"
    "  train         train a model; writes checkpoint and per-epoch log\n"
    "  eval          evaluate a checkpoint; prints per-class IoU and mIoU\n"
    "  infer         run inference and export colored PLY files\n"
    "  ablate-voxel  train/evaluate one model per voxel size in `sizes`\n"
    "  ablate-loss   compare plain cross-entropy against the combined loss\n"
    "  bench         per-stage timings plus the sparse-vs-dense comparison\n"
    "  gradcheck     finite-difference check of every layer and the full model\n"
    "\n"
    "Config keys come from the config file and are overridable with --key value\n"
    "flags (for example --epochs 10 --voxel_size 0.2). Unknown keys fail.\n";

struct CommandEntry {
    const char* name;
    pcsc_status (*fn)(const pcsc_config*);
};

const CommandEntry kCommands[] = {
    {"make-synth", pcsc_run_make_synth},
    {"train", pcsc_run_train},
    {"eval", pcsc_run_eval},
    {"infer", pcsc_run_infer},
    {"ablate-voxel", pcsc_run_ablate_voxel},
    {"ablate-loss", pcsc_run_ablate_loss},
    {"bench", pcsc_run_bench},
    {"gradcheck", pcsc_run_gradcheck},
};

int fail_line(pcsc_status status) {
    std::fprintf(stderr, "error: code=%s msg=\"%s\"\n", pcsc_status_name(status), pcsc_last_error());
    return 1;
}

} // namespace

int main(int argc, char** argv) {
    if (argc < 2 || std::strcmp(argv[1], "--help") == 0 || std::strcmp(argv[1], "-h") == 0) {
        std::fputs(kUsage, argc < 2 ? stderr : stdout);
        return argc < 2 ? 2 : 0;
    }

    const CommandEntry* command = nullptr;
    for (const auto& entry : kCommands)
        if (std::strcmp(argv[1], entry.name) == 0) command = &entry;
    if (!command) {
        std::fprintf(stderr, "error: code=invalid_argument msg=\"unknown command '%s'\"\n", argv[1]);
        return 2;
    }

    pcsc_config* cfg = nullptr;
    pcsc_status status = pcsc_config_create(&cfg);
    if (status != PCSC_OK) return fail_line(status);

    for (int i = 2; i < argc; ++i) {
        const char* arg = argv[i];
        if (std::strncmp(arg, "--", 2) != 0) {
            std::fprintf(stderr, "error: code=invalid_argument msg=\"expected --key, got '%s'\"\n", arg);
            pcsc_config_destroy(cfg);
            return 2;
        }
        if (i + 1 >= argc) {
            std::fprintf(stderr, "error: code=invalid_argument msg=\"flag '%s' needs a value\"\n", arg);
            pcsc_config_destroy(cfg);
            return 2;
        }
        const char* key = arg + 2;
        const char* value = argv[++i];
        status = std::strcmp(key, "config") == 0 ? pcsc_config_load_file(cfg, value)
                                                 : pcsc_config_set(cfg, key, value);
        if (status != PCSC_OK) {
            const int rc = fail_line(status);
            pcsc_config_destroy(cfg);
            return rc;
        }
    }

    status = command->fn(cfg);
    pcsc_config_destroy(cfg);
    return status == PCSC_OK ? 0 : fail_line(status);
}
