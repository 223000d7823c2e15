#pragma once

#include <vector>

#include "cim/config.hpp"
#include "cim/layers.hpp"
#include "cim/token_seq.hpp"

namespace cim {

// trunc02 covers embeddings and the head; mixer/channel projections use
// fan-in scaling so block outputs start at unit scale (otherwise the gated
// branches square the 0.02 factor and the toy trainer stalls near ln 2).
enum class Init { trunc02, trunc_fan_in, zeros, ones, dt_bias_log_uniform, a_log_uniform };

struct ParamSpec {
    std::string name;
    Shape shape;
    Init init;
};

// Single source of truth for parameter names, shapes and init schemes;
// checkpointing, counting and construction all derive from it.
std::vector<ParamSpec> param_specs(const ModelConfig& cfg);
int64_t count_params(const ModelConfig& cfg);

// Reference parameter budget for the four published scales, 0 otherwise.
double preset_param_budget(const std::string& preset);

template <class T>
struct BlockParams {
    BasicTensor<T> mixer_norm;    // [d]
    BasicTensor<T> mixer2_norm;   // [d], only when channel_mixer == none
    BasicTensor<T> channel_norm;  // [d], when a channel mixer exists
    SsdParams<T> ssd, ssd2;
    AttnParams<T> attn, attn2;
    ChannelMixerParams<T> channel;
};

template <class T>
struct ModelParams {
    ModelConfig cfg;
    std::vector<std::pair<std::string, BasicTensor<T>>> named;  // param_specs order

    PatchEmbedParams<T> patch_embed;
    BasicTensor<T> pos_embed;       // [n+1, d]
    BasicTensor<T> cls_token;       // [1, d]
    BasicTensor<T> heading_token;   // [1, d] when heading == learnable
    std::vector<BlockParams<T>> blocks;
    BasicTensor<T> final_norm;      // [d] when norm == rms
    BasicTensor<T> head_w;          // [d, num_classes]
    BasicTensor<T> head_b;          // [num_classes]

    BasicTensor<T>& find(const std::string& name);
    const BasicTensor<T>& find(const std::string& name) const;
};

template <class T>
ModelParams<T> init_params(const ModelConfig& cfg, uint64_t seed);

// Marks every parameter as differentiable (training / gradient audits).
template <class T>
void require_all_grads(ModelParams<T>& p);

// Test-only switches threaded through the forward pass.
struct TestHooks {
    bool disable_flip = false;  // fault injection: silently skip inter-layer flipping
    ScanHooks scan;
};

// Optional per-block records for invariant checks.
template <class T>
struct BlockTrace {
    std::vector<BasicTensor<T>> boundary;         // sequence entering each block, plus the final one
    std::vector<std::string> boundary_roles;
    std::vector<BasicTensor<T>> heading_rows;     // rows prepended for each block (undefined if none)
    std::vector<BasicTensor<T>> mixer_input;      // augmented sequence entering the token mixer
};

// ---- sequence surgery ----

// Fresh heading rows for the current sequence per cfg.heading: the all-token
// mean, grid-cell means over patches, a copy of cls, or the learned token.
template <class T>
BasicTensor<T> compute_heading_rows(BasicGraph<T>& g, const BasicTokenSeq<T>& seq,
                                    const ModelConfig& cfg, const BasicTensor<T>& learned_token);

// Prepends heading rows (freshly computed, or `frozen` when defined).
template <class T>
BasicTokenSeq<T> prepend_heading(BasicGraph<T>& g, const BasicTokenSeq<T>& seq,
                                 const ModelConfig& cfg, const BasicTensor<T>& learned_token,
                                 const BasicTensor<T>& frozen = {});

template <class T>
BasicTokenSeq<T> drop_heading(BasicGraph<T>& g, const BasicTokenSeq<T>& seq);

// Reverses patch rows, cls stays last. Requires roles [patch*n, cls].
template <class T>
BasicTokenSeq<T> flip_patches(BasicGraph<T>& g, const BasicTokenSeq<T>& seq);

// ---- model forward ----

template <class T>
BasicTokenSeq<T> adventurer_block(BasicGraph<T>& g, const BasicTokenSeq<T>& seq,
                                  const ModelParams<T>& params, int64_t block_idx,
                                  const BasicTensor<T>& frozen_heading, const TestHooks& hooks = {},
                                  BlockTrace<T>* trace = nullptr);

template <class T>
BasicTokenSeq<T> forward_features(BasicGraph<T>& g, const BasicTensor<T>& image,
                                  const ModelParams<T>& params, const TestHooks& hooks = {},
                                  BlockTrace<T>* trace = nullptr);

template <class T>
BasicTensor<T> classify(BasicGraph<T>& g, const BasicTensor<T>& image,
                        const ModelParams<T>& params, const TestHooks& hooks = {},
                        BlockTrace<T>* trace = nullptr);

}  // namespace cim
