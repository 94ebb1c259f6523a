#pragma once

#include <map>
#include <stdexcept>
#include <string>

#include "lvd/model.hpp"
#include "lvd/trainer.hpp"

namespace lvd {

// configuration problems map to exit code 3 in the CLI
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct SampleDefaults {
    std::string sampler = "ddim";  // ddim | ddpm
    int steps = 50;
    double guidance = 7.5;
    double fps = 8.0;
    int frames = 8;
};

// Flat key=value file with [sections]. Every field has a default; parsing is
// strict (unknown keys or malformed values raise ConfigError).
struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    std::string manifest_path = "data/manifest.txt";
    std::string vocab_path = "data/vocab.txt";
    SampleDefaults sample;
    std::string out_dir = "out";
    uint64_t seed = 0;

    static RunConfig parse(const std::string& text);
    static RunConfig load(const std::string& path);
    std::string serialize() const;
    void validate() const;  // field ranges; throws ConfigError
};

// low-level section/key parser, exposed for tests
std::map<std::string, std::map<std::string, std::string>> parse_ini(const std::string& text);

}  // namespace lvd
