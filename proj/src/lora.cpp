#include "xling/lora.hpp"

#include <cmath>

#include "json.hpp"
#include "xling/io.hpp"

namespace xling {

LoraAdapter LoraAdapter::create(std::string target_weight_id, std::size_t d_out, std::size_t d_in,
                                std::size_t rank, double scale, Rng& rng) {
    if (rank < 1) throw ValidationError("LoRA rank must be >= 1");
    LoraAdapter a;
    a.target_weight_id = std::move(target_weight_id);
    a.rank = rank;
    a.down = random_normal(rank, d_in, 1.0 / std::sqrt(static_cast<double>(d_in)), rng);
    a.up = Matrix(d_out, rank);
    a.scale = scale;
    return a;
}

Matrix LoraAdapter::delta() const {
    Matrix d = matmul(up, down);
    for (double& v : d.data()) v *= scale;
    return d;
}

const LoraAdapter* AdapterSet::find(const std::string& weight_id) const {
    auto it = adapters.find(weight_id);
    return it == adapters.end() ? nullptr : &it->second;
}

Matrix linear_forward(const Matrix& x, const Matrix& weight, const LoraAdapter* adapter,
                      Matrix* projected) {
    Matrix y = matmul_bt(x, weight);
    if (adapter) {
        if (adapter->d_in() != weight.cols() || adapter->d_out() != weight.rows()) {
            throw ShapeError("adapter " + adapter->target_weight_id + " delta " +
                             std::to_string(adapter->d_out()) + "x" + std::to_string(adapter->d_in()) +
                             " does not match weight " + weight.shape_string());
        }
        Matrix p = matmul_bt(x, adapter->down);
        Matrix extra = matmul_bt(p, adapter->up);
        add_inplace(y, extra, adapter->scale);
        if (projected) *projected = std::move(p);
    }
    return y;
}

void save_adapters(const std::filesystem::path& path, const AdapterSet& set) {
    nlohmann::json j;
    j["format_version"] = 1;
    j["adapters"] = nlohmann::json::array();
    for (const auto& [id, a] : set.adapters) {
        j["adapters"].push_back({{"target_weight_id", id},
                                 {"rank", a.rank},
                                 {"d_in", a.d_in()},
                                 {"d_out", a.d_out()},
                                 {"scale", a.scale},
                                 {"down", a.down.data()},
                                 {"up", a.up.data()}});
    }
    write_text_file(path, j.dump() + "\n");
}

AdapterSet load_adapters(const std::filesystem::path& path) {
    const auto j = parse_json_file(path);
    try {
        if (j.at("format_version").get<int>() != 1)
            throw ValidationError(path.string() + ": unsupported adapter format_version");
        AdapterSet set;
        for (const auto& a : j.at("adapters")) {
            LoraAdapter ad;
            ad.target_weight_id = a.at("target_weight_id").get<std::string>();
            ad.rank = a.at("rank").get<std::size_t>();
            const auto d_in = a.at("d_in").get<std::size_t>();
            const auto d_out = a.at("d_out").get<std::size_t>();
            ad.scale = a.at("scale").get<double>();
            ad.down = Matrix(ad.rank, d_in, a.at("down").get<Vector>());
            ad.up = Matrix(d_out, ad.rank, a.at("up").get<Vector>());
            set.adapters.emplace(ad.target_weight_id, std::move(ad));
        }
        return set;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(path.string() + ": malformed adapter checkpoint: " + e.what());
    }
}

}  // namespace xling
