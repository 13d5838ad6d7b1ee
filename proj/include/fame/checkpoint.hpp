#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "fame/model.hpp"

// Checkpoint file: a text manifest (model config, then one line per tensor
// with name, shape and byte offset) followed by a flat blob of little-endian
// IEEE-754 float32 values. load(save(params)) is value-exact at float32
// resolution, and save(load(file)) reproduces the file byte for byte.

namespace fame {

namespace detail {

inline std::string config_lines(const ModelConfig& cfg) {
    std::ostringstream out;
    out << "config num_layers " << cfg.num_layers << '\n';
    out << "config hidden " << cfg.hidden << '\n';
    out << "config filter " << cfg.filter << '\n';
    out << "config num_heads " << cfg.num_heads << '\n';
    out << "config vocab_size " << cfg.vocab_size << '\n';
    out << "config max_input_len " << cfg.max_input_len << '\n';
    out << "config max_output_len " << cfg.max_output_len << '\n';
    out << "config share_encoder_decoder " << (cfg.share_encoder_decoder ? 1 : 0) << '\n';
    out << "config use_focus_bias " << (cfg.use_focus_bias ? 1 : 0) << '\n';
    out << "config dropout " << cfg.dropout << '\n';
    out << "config head_mix " << head_mix_name(cfg.head_mix) << '\n';
    out << "config head_index " << cfg.head_index << '\n';
    return out.str();
}

inline void apply_config_line(ModelConfig& cfg, const std::string& key, const std::string& value) {
    if (key == "num_layers") cfg.num_layers = std::stoull(value);
    else if (key == "hidden") cfg.hidden = std::stoull(value);
    else if (key == "filter") cfg.filter = std::stoull(value);
    else if (key == "num_heads") cfg.num_heads = std::stoull(value);
    else if (key == "vocab_size") cfg.vocab_size = std::stoull(value);
    else if (key == "max_input_len") cfg.max_input_len = std::stoull(value);
    else if (key == "max_output_len") cfg.max_output_len = std::stoull(value);
    else if (key == "share_encoder_decoder") cfg.share_encoder_decoder = value != "0";
    else if (key == "use_focus_bias") cfg.use_focus_bias = value != "0";
    else if (key == "dropout") cfg.dropout = std::stod(value);
    else if (key == "head_mix") cfg.head_mix = head_mix_from_name(value);
    else if (key == "head_index") cfg.head_index = std::stoull(value);
    else throw ParseError("checkpoint: unknown config key '" + key + "'");
}

/// Zero-valued parameters with the right structure for `cfg`.
inline ModelParams params_skeleton(const ModelConfig& cfg) {
    ModelParams p;
    p.embedding = Tensor({cfg.vocab_size, cfg.hidden});
    auto zero_layer = [&]() {
        LayerParams l;
        l.wq = Tensor({cfg.hidden, cfg.hidden});
        l.wk = Tensor({cfg.hidden, cfg.hidden});
        l.wv = Tensor({cfg.hidden, cfg.hidden});
        l.wo = Tensor({cfg.hidden, cfg.hidden});
        l.ln1_gain = Tensor({cfg.hidden});
        l.ln1_bias = Tensor({cfg.hidden});
        l.cq = Tensor({cfg.hidden, cfg.hidden});
        l.ck = Tensor({cfg.hidden, cfg.hidden});
        l.cv = Tensor({cfg.hidden, cfg.hidden});
        l.co = Tensor({cfg.hidden, cfg.hidden});
        l.lnc_gain = Tensor({cfg.hidden});
        l.lnc_bias = Tensor({cfg.hidden});
        l.ffn_w1 = Tensor({cfg.hidden, cfg.filter});
        l.ffn_w2 = Tensor({cfg.filter, cfg.hidden});
        l.ln2_gain = Tensor({cfg.hidden});
        l.ln2_bias = Tensor({cfg.hidden});
        return l;
    };
    if (!cfg.share_encoder_decoder) {
        for (size_t l = 0; l < cfg.num_layers; ++l) p.enc_layers.push_back(zero_layer());
    }
    for (size_t l = 0; l < cfg.num_layers; ++l) p.dec_layers.push_back(zero_layer());
    p.enc_ln_gain = Tensor({cfg.hidden});
    p.enc_ln_bias = Tensor({cfg.hidden});
    p.dec_ln_gain = Tensor({cfg.hidden});
    p.dec_ln_bias = Tensor({cfg.hidden});
    p.focus.w1 = Tensor({cfg.hidden, cfg.filter});
    p.focus.w2 = Tensor({cfg.filter, cfg.hidden});
    return p;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const ModelConfig& cfg,
                            const ModelParams& params) {
    const auto tensors = named_tensors(params);
    std::ostringstream manifest;
    manifest << "fameckpt 1\n";
    manifest << detail::config_lines(cfg);
    size_t offset = 0;
    for (const auto& [name, t] : tensors) {
        manifest << "tensor " << name << ' ' << t.rank();
        for (size_t d : t.shape()) manifest << ' ' << d;
        manifest << ' ' << offset << '\n';
        offset += t.size() * sizeof(float);
    }
    manifest << "blob " << offset << '\n';

    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("checkpoint: cannot write " + path);
    const std::string header = manifest.str();
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto& [name, t] : tensors) {
        std::vector<float> buf(t.size());
        for (size_t i = 0; i < t.size(); ++i) buf[i] = static_cast<float>(t.at(i));
        out.write(reinterpret_cast<const char*>(buf.data()),
                  static_cast<std::streamsize>(buf.size() * sizeof(float)));
    }
}

inline std::pair<ModelConfig, ModelParams> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("checkpoint: cannot read " + path);
    std::string line;
    if (!std::getline(in, line) || line != "fameckpt 1") {
        throw ParseError("checkpoint: bad magic in " + path);
    }
    ModelConfig cfg;
    struct Entry {
        std::string name;
        std::vector<size_t> shape;
        size_t offset;
    };
    std::vector<Entry> entries;
    size_t blob_bytes = 0;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string kind;
        ls >> kind;
        if (kind == "config") {
            std::string key, value;
            ls >> key >> value;
            detail::apply_config_line(cfg, key, value);
        } else if (kind == "tensor") {
            Entry e;
            size_t rank = 0;
            ls >> e.name >> rank;
            e.shape.resize(rank);
            for (size_t i = 0; i < rank; ++i) ls >> e.shape[i];
            ls >> e.offset;
            if (!ls) throw ParseError("checkpoint: malformed tensor line '" + line + "'");
            entries.push_back(std::move(e));
        } else if (kind == "blob") {
            ls >> blob_bytes;
            break;
        } else {
            throw ParseError("checkpoint: unexpected line '" + line + "'");
        }
    }
    std::vector<char> blob(blob_bytes);
    in.read(blob.data(), static_cast<std::streamsize>(blob_bytes));
    if (static_cast<size_t>(in.gcount()) != blob_bytes) {
        throw ParseError("checkpoint: truncated blob in " + path);
    }

    cfg.validate();
    ModelParams params = detail::params_skeleton(cfg);
    auto tensors = named_tensors(params);
    if (tensors.size() != entries.size()) {
        throw ParseError("checkpoint: expected " + std::to_string(tensors.size()) +
                         " tensors, found " + std::to_string(entries.size()));
    }
    for (size_t i = 0; i < entries.size(); ++i) {
        auto& [name, t] = tensors[i];
        const Entry& e = entries[i];
        if (e.name != name) {
            throw ParseError("checkpoint: tensor '" + e.name + "' where '" + name + "' expected");
        }
        if (e.shape != t.shape()) {
            throw ParseError("checkpoint: shape mismatch for '" + name + "'");
        }
        if (e.offset + t.size() * sizeof(float) > blob_bytes) {
            throw ParseError("checkpoint: tensor '" + name + "' overruns the blob");
        }
        for (size_t j = 0; j < t.size(); ++j) {
            float f;
            std::memcpy(&f, blob.data() + e.offset + j * sizeof(float), sizeof(float));
            t.at(j) = static_cast<double>(f);
        }
    }
    return {cfg, params};
}

}  // namespace fame
