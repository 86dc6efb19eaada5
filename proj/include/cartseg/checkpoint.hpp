#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include "cartseg/npy.hpp"
#include "cartseg/tensor.hpp"
#include "cartseg/unet_config.hpp"

namespace cartseg {

struct CheckpointProvenance {
    std::string source_sequence = "scratch"; // sequence tag of the training data
    int epochs_trained = 0;
    double best_val_dsc = 0.0;
    std::uint64_t rng_seed = 0;
};

inline void to_json(nlohmann::json& j, const CheckpointProvenance& p)
{
    j = nlohmann::json { { "source_sequence", p.source_sequence },
        { "epochs_trained", p.epochs_trained }, { "best_val_dsc", p.best_val_dsc },
        { "rng_seed", p.rng_seed } };
}

inline void from_json(const nlohmann::json& j, CheckpointProvenance& p)
{
    j.at("source_sequence").get_to(p.source_sequence);
    j.at("epochs_trained").get_to(p.epochs_trained);
    j.at("best_val_dsc").get_to(p.best_val_dsc);
    j.at("rng_seed").get_to(p.rng_seed);
}

// On disk: a directory holding weights/<name>.npy per array plus manifest.json
// with the architecture config and provenance.
struct ModelCheckpoint {
    UNetConfig arch;
    std::map<std::string, TensorF> params;
    std::map<std::string, TensorF> buffers; // batch-norm running statistics
    CheckpointProvenance provenance;

    // Parameter names in the weight map and the architecture's declared set
    // must agree exactly, shapes included.
    void validate() const
    {
        auto check = [](const std::vector<ParamSpec>& declared,
                         const std::map<std::string, TensorF>& have, const char* what) {
            if (declared.size() != have.size())
                throw DataError(std::string("checkpoint ") + what + " count mismatch: declared "
                    + std::to_string(declared.size()) + ", have " + std::to_string(have.size()));
            for (const auto& spec : declared) {
                auto it = have.find(spec.name);
                if (it == have.end())
                    throw DataError(std::string("checkpoint missing ") + what + " '" + spec.name + "'");
                if (it->second.shape != spec.shape)
                    throw DataError("checkpoint shape mismatch for '" + spec.name + "'");
            }
        };
        check(declared_parameters(arch), params, "parameter");
        check(declared_buffers(arch), buffers, "buffer");
    }

    std::int64_t parameter_count() const
    {
        std::int64_t n = 0;
        for (const auto& [name, t] : params)
            n += t.numel();
        return n;
    }
};

inline void save_checkpoint(const ModelCheckpoint& cp, const std::filesystem::path& dir)
{
    cp.validate();
    std::filesystem::create_directories(dir / "weights");
    nlohmann::json manifest;
    manifest["arch"] = cp.arch;
    manifest["provenance"] = cp.provenance;
    auto dump = [&dir](const std::map<std::string, TensorF>& arrays, nlohmann::json& list) {
        list = nlohmann::json::array();
        for (const auto& [name, t] : arrays) {
            npy::save(dir / "weights" / (name + ".npy"), t.data, t.shape);
            list.push_back({ { "name", name }, { "shape", t.shape } });
        }
    };
    dump(cp.params, manifest["params"]);
    dump(cp.buffers, manifest["buffers"]);

    std::ofstream f(dir / "manifest.json");
    if (!f)
        throw DataError("cannot write checkpoint manifest in " + dir.string());
    f << manifest.dump(2) << '\n';
}

inline ModelCheckpoint load_checkpoint(const std::filesystem::path& dir)
{
    std::ifstream f(dir / "manifest.json");
    if (!f)
        throw DataError("checkpoint manifest not found in " + dir.string());
    nlohmann::json manifest = nlohmann::json::parse(f);

    ModelCheckpoint cp;
    cp.arch = manifest.at("arch").get<UNetConfig>();
    cp.provenance = manifest.at("provenance").get<CheckpointProvenance>();
    auto slurp = [&dir](const nlohmann::json& list, std::map<std::string, TensorF>& arrays) {
        for (const auto& item : list) {
            const auto name = item.at("name").get<std::string>();
            TensorF t;
            t.data = npy::load<float>(dir / "weights" / (name + ".npy"), t.shape);
            arrays.emplace(name, std::move(t));
        }
    };
    slurp(manifest.at("params"), cp.params);
    slurp(manifest.at("buffers"), cp.buffers);
    cp.validate();
    return cp;
}

} // namespace cartseg
