#pragma once

#include "m3fas/ops.hpp"
#include "m3fas/tensor.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace m3fas {

enum class FusionStrategy { cat, avg, res, wbln, ca };
enum class Route { vision, acoustic, fusion };

FusionStrategy parse_fusion_strategy(const std::string& name);
std::string fusion_strategy_name(FusionStrategy s);

// Two branches of three blocks each (8 conv layers total), three fusion
// stages carrying an aggregated feature forward, and three heads.
struct ModelConfig {
    Eigen::Index vision_size = 32;   // vision input is (3, vision_size, vision_size)
    Eigen::Index spec_bins = 33;     // acoustic input is (1, spec_bins, spec_frames)
    Eigen::Index spec_frames = 30;
    std::array<int, 3> block_layers = {3, 3, 2};
    std::array<Eigen::Index, 3> channels = {16, 32, 64};
    std::array<Eigen::Index, 3> fusion_grid = {8, 4, 2};  // spatial size per fusion stage
    std::array<bool, 3> fusion_levels = {true, true, true};
    FusionStrategy fusion = FusionStrategy::ca;
    std::uint64_t init_seed = 42;
};

void validate_model_config(const ModelConfig& cfg);

struct ConvBnLayer {
    Tensor weight, bias;
    Tensor bn_gamma, bn_beta;
    Tensor bn_running_mean, bn_running_var;  // state, not trained
};

struct BranchParams {
    std::array<std::vector<ConvBnLayer>, 3> blocks;
};

// One direction of cross-modality attention. Projections are square (token
// channels -> token channels) so the gated residual addition typechecks.
struct CMAParams {
    Tensor w_q, w_k, w_v;
    Tensor gamma;  // scalar, initialized to zero
};

struct HCAMParams {
    bool active = false;
    Eigen::Index grid = 0;
    Tensor conv_v_w, conv_v_b;
    Tensor conv_a_w, conv_a_b;
    CMAParams cma_acoustic;  // acoustic tokens query vision tokens
    CMAParams cma_vision;    // vision tokens query acoustic tokens
    // Extra parameters for the ablation fusion strategies; only the ones the
    // configured strategy needs are allocated.
    Tensor res_conv_w, res_conv_b;
    Tensor wbln_theta_v, wbln_theta_a;
    Tensor wbln_bn_v_gamma, wbln_bn_v_beta, wbln_bn_v_rm, wbln_bn_v_rv;
    Tensor wbln_bn_a_gamma, wbln_bn_a_beta, wbln_bn_a_rm, wbln_bn_a_rv;
};

struct HeadParams {
    Tensor bn_gamma, bn_beta, bn_running_mean, bn_running_var;
    Tensor fc_w, fc_b;
};

struct M3FASModel {
    ModelConfig config;
    BranchParams vision, acoustic;
    std::array<HCAMParams, 3> hcams;
    HeadParams head_vision, head_acoustic, head_fusion;

    // Registry in construction order; names are stable and drive checkpoints.
    std::vector<std::pair<std::string, Tensor>> parameters;
    std::vector<std::pair<std::string, Tensor>> state;

    std::vector<Tensor> trainable() const;
    Eigen::Index parameter_count() const;
};

M3FASModel build_model(const ModelConfig& cfg);

struct ModelOutput {
    Tensor logit_vision, logit_acoustic, logit_fusion;  // each (B), when computed
    Tensor fused_features;                              // last fusion stage output
};

// Gated residual cross attention:
//   out = z_q + gamma * softmax(z_q Wq (z_kv Wk)^T / sqrt(d)) (z_kv Wv)
// Tokens are (B, positions, channels).
Tensor cma(const Tensor& tokens_q, const Tensor& tokens_kv, const CMAParams& p);

// Strategy-switchable fusion of the two pooled modality features plus the
// carried feature from the previous stage (undefined for the first stage).
Tensor fuse_features(const Tensor& z_v, const Tensor& z_a, const Tensor& f_c_prev,
                     const Tensor& pooled_f_v, FusionStrategy strategy, HCAMParams& p,
                     bool training);

// Full fusion stage: per-modality conv + pool to the stage grid, strategy
// fusion, carry concatenation.
Tensor hcam_forward(const Tensor& f_v, const Tensor& f_a, const Tensor& f_c_prev,
                    HCAMParams& p, FusionStrategy strategy, bool training);

// Route-dependent forward. The vision route ignores (and does not require)
// the spectrogram; the acoustic route ignores the image; fusion computes all
// three heads.
ModelOutput model_forward(M3FASModel& model, const Tensor* image, const Tensor* spectrogram,
                          Route route, bool training);

// L_total = L_f + alpha * (L_v + L_a); requires all three logits.
Tensor total_loss(const ModelOutput& out, const Eigen::ArrayXd& labels, double alpha);

}  // namespace m3fas
