#include "sdkd/checkpoint.hpp"

#include <stdexcept>

#include "json.hpp"
#include "sdkd/io.hpp"

namespace sdkd::nn {

using nlohmann::json;

namespace {

std::string sanitize(const std::string& name) {
    std::string s = name;
    for (char& c : s)
        if (c == '/' || c == '\\') c = '_';
    return s;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ck,
                     const std::string& dtype) {
    std::filesystem::create_directories(dir / "tensors");
    json manifest;
    manifest["model_spec"] = json::parse(ck.spec.to_json());
    manifest["extra"] = json::parse(ck.extra_json.empty() ? "{}" : ck.extra_json);
    json jt = json::array();
    int idx = 0;
    for (const auto& [name, tensor] : ck.tensors) {
        const std::string file =
            "tensors/" + std::to_string(idx++) + "_" + sanitize(name) + ".bin";
        std::vector<double> flat(tensor.data(), tensor.data() + tensor.numel());
        io::write_blob(dir / file, flat, dtype);
        jt.push_back({{"name", name},
                      {"shape", tensor.shape()},
                      {"dtype", dtype},
                      {"file", file},
                      {"crc32", io::crc32_hex(io::blob_crc(flat, dtype))}});
    }
    manifest["tensors"] = jt;
    io::write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
    json manifest = json::parse(io::read_text_file(dir / "manifest.json"));
    Checkpoint ck;
    ck.spec = ModelSpec::from_json(manifest.at("model_spec").dump());
    ck.extra_json = manifest.at("extra").dump();
    for (const json& jt : manifest.at("tensors")) {
        const std::string name = jt.at("name").get<std::string>();
        const std::vector<int> shape = jt.at("shape").get<std::vector<int>>();
        const std::string dtype = jt.at("dtype").get<std::string>();
        Tensor t(shape);
        std::vector<double> flat = io::read_blob(dir / jt.at("file").get<std::string>(),
                                                 t.numel(), dtype);
        const std::string crc = io::crc32_hex(io::blob_crc(flat, dtype));
        if (crc != jt.at("crc32").get<std::string>())
            throw std::runtime_error("checkpoint: checksum mismatch for tensor " + name);
        for (int64_t i = 0; i < t.numel(); ++i) t[i] = flat[static_cast<size_t>(i)];
        ck.tensors.emplace_back(name, std::move(t));
    }
    return ck;
}

void load_into_model(Model& model, const Checkpoint& ck) {
    if (!(model.spec() == ck.spec))
        throw std::runtime_error("checkpoint: model spec mismatch (checkpoint is " +
                                 ck.spec.to_json() + ")");
    size_t loaded = 0;
    for (const auto& [name, tensor] : ck.tensors) {
        if (name.rfind("param/", 0) != 0) continue;
        const std::string pname = name.substr(6);
        Tensor& dst = model.params().at(pname);
        if (!dst.same_shape(tensor))
            throw std::runtime_error("checkpoint: tensor " + pname + " has shape " +
                                     tensor.shape_str() + ", model wants " + dst.shape_str());
        dst = tensor;
        ++loaded;
    }
    if (loaded != model.params().names().size())
        throw std::runtime_error("checkpoint: expected " +
                                 std::to_string(model.params().names().size()) +
                                 " parameters, found " + std::to_string(loaded));
}

Checkpoint checkpoint_of_model(const Model& model) {
    Checkpoint ck;
    ck.spec = model.spec();
    for (const auto& name : model.params().names())
        ck.tensors.emplace_back("param/" + name, model.params().at(name));
    return ck;
}

}  // namespace sdkd::nn
