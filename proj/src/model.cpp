#include "m3fas/model.hpp"

#include "m3fas/rng.hpp"

#include <cmath>

namespace m3fas {

FusionStrategy parse_fusion_strategy(const std::string& name) {
    if (name == "cat") return FusionStrategy::cat;
    if (name == "avg") return FusionStrategy::avg;
    if (name == "res") return FusionStrategy::res;
    if (name == "wbln") return FusionStrategy::wbln;
    if (name == "ca") return FusionStrategy::ca;
    throw InvalidInputError("unknown fusion strategy: " + name);
}

std::string fusion_strategy_name(FusionStrategy s) {
    switch (s) {
        case FusionStrategy::cat: return "cat";
        case FusionStrategy::avg: return "avg";
        case FusionStrategy::res: return "res";
        case FusionStrategy::wbln: return "wbln";
        case FusionStrategy::ca: return "ca";
    }
    return "ca";
}

namespace {

// Output channels a fusion stage contributes before the carry is appended.
Eigen::Index strategy_channels(FusionStrategy s, Eigen::Index c) {
    switch (s) {
        case FusionStrategy::avg:
        case FusionStrategy::res: return c;
        default: return 2 * c;
    }
}

Eigen::Index pooled(Eigen::Index n, int times) {
    for (int i = 0; i < times; ++i) n /= 2;
    return n;
}

}  // namespace

void validate_model_config(const ModelConfig& cfg) {
    int total = 0;
    for (int l : cfg.block_layers) {
        require(l >= 1, "every block needs at least one conv layer");
        total += l;
    }
    require(total == 8, "branch depth is fixed at 8 conv layers across 3 blocks");
    for (Eigen::Index c : cfg.channels) require(c >= 1, "channel widths must be positive");
    require(cfg.vision_size >= 8, "vision input must be at least 8x8");
    require(cfg.spec_bins >= 8 && cfg.spec_frames >= 8, "spectrogram input too small");
    bool any = false;
    for (int k = 0; k < 3; ++k) {
        if (!cfg.fusion_levels[std::size_t(k)]) continue;
        any = true;
        const Eigen::Index g = cfg.fusion_grid[std::size_t(k)];
        require(g >= 1, "fusion grid must be positive");
        const Eigen::Index hv = pooled(cfg.vision_size, k + 1);
        const Eigen::Index ha = pooled(cfg.spec_bins, k + 1);
        const Eigen::Index wa = pooled(cfg.spec_frames, k + 1);
        require(g <= hv && g <= ha && g <= wa,
                "fusion grid " + std::to_string(g) + " exceeds level-" + std::to_string(k + 1) +
                    " feature size");
    }
    require(any, "at least one fusion stage must be active");
}

namespace {

struct Builder {
    M3FASModel& model;
    Rng rng;

    Tensor param(const std::string& name, const Shape& shape, double std_dev) {
        Eigen::ArrayXd data(shape_numel(shape));
        for (Eigen::Index i = 0; i < data.size(); ++i)
            data[i] = std_dev == 0.0 ? 0.0 : rng.normal(0.0, std_dev);
        Tensor t = Tensor::from_array(shape, std::move(data), true);
        model.parameters.emplace_back(name, t);
        return t;
    }

    Tensor const_param(const std::string& name, const Shape& shape, double v) {
        Tensor t = Tensor::full(shape, v, true);
        model.parameters.emplace_back(name, t);
        return t;
    }

    Tensor state(const std::string& name, const Shape& shape, double v) {
        Tensor t = Tensor::full(shape, v, false);
        model.state.emplace_back(name, t);
        return t;
    }

    ConvBnLayer conv_bn(const std::string& prefix, Eigen::Index in_c, Eigen::Index out_c) {
        ConvBnLayer l;
        const double std_dev = std::sqrt(2.0 / double(in_c * 9));
        l.weight = param(prefix + ".weight", {out_c, in_c, 3, 3}, std_dev);
        l.bias = const_param(prefix + ".bias", {out_c}, 0.0);
        l.bn_gamma = const_param(prefix + ".bn_gamma", {out_c}, 1.0);
        l.bn_beta = const_param(prefix + ".bn_beta", {out_c}, 0.0);
        l.bn_running_mean = state(prefix + ".bn_running_mean", {out_c}, 0.0);
        l.bn_running_var = state(prefix + ".bn_running_var", {out_c}, 1.0);
        return l;
    }

    CMAParams cma_params(const std::string& prefix, Eigen::Index c) {
        CMAParams p;
        const double std_dev = std::sqrt(1.0 / double(c));
        p.w_q = param(prefix + ".w_q", {c, c}, std_dev);
        p.w_k = param(prefix + ".w_k", {c, c}, std_dev);
        p.w_v = param(prefix + ".w_v", {c, c}, std_dev);
        p.gamma = const_param(prefix + ".gamma", {1}, 0.0);
        return p;
    }

    HeadParams head(const std::string& prefix, Eigen::Index in_c) {
        HeadParams h;
        h.bn_gamma = const_param(prefix + ".bn_gamma", {in_c}, 1.0);
        h.bn_beta = const_param(prefix + ".bn_beta", {in_c}, 0.0);
        h.bn_running_mean = state(prefix + ".bn_running_mean", {in_c}, 0.0);
        h.bn_running_var = state(prefix + ".bn_running_var", {in_c}, 1.0);
        h.fc_w = param(prefix + ".fc_weight", {in_c, 1}, std::sqrt(2.0 / double(in_c)));
        h.fc_b = const_param(prefix + ".fc_bias", {1}, 0.0);
        return h;
    }
};

}  // namespace

M3FASModel build_model(const ModelConfig& cfg) {
    validate_model_config(cfg);
    M3FASModel model;
    model.config = cfg;
    Builder b{model, Rng(mix_seed(cfg.init_seed, 0x30de1000ull))};

    for (int branch = 0; branch < 2; ++branch) {
        BranchParams& bp = branch == 0 ? model.vision : model.acoustic;
        const std::string bname = branch == 0 ? "vision" : "acoustic";
        Eigen::Index in_c = branch == 0 ? 3 : 1;
        for (int blk = 0; blk < 3; ++blk) {
            const Eigen::Index out_c = cfg.channels[std::size_t(blk)];
            for (int layer = 0; layer < cfg.block_layers[std::size_t(blk)]; ++layer) {
                const std::string prefix = bname + ".block" + std::to_string(blk + 1) +
                                           ".conv" + std::to_string(layer + 1);
                bp.blocks[std::size_t(blk)].push_back(
                    b.conv_bn(prefix, layer == 0 ? in_c : out_c, out_c));
            }
            in_c = out_c;
        }
    }

    Eigen::Index carry_ch = 0;
    for (int k = 0; k < 3; ++k) {
        HCAMParams& h = model.hcams[std::size_t(k)];
        h.active = cfg.fusion_levels[std::size_t(k)];
        if (!h.active) continue;
        h.grid = cfg.fusion_grid[std::size_t(k)];
        const Eigen::Index c = cfg.channels[std::size_t(k)];
        const std::string prefix = "hcam" + std::to_string(k + 1);
        const double std_dev = std::sqrt(2.0 / double(c * 9));
        h.conv_v_w = b.param(prefix + ".conv_v.weight", {c, c, 3, 3}, std_dev);
        h.conv_v_b = b.const_param(prefix + ".conv_v.bias", {c}, 0.0);
        h.conv_a_w = b.param(prefix + ".conv_a.weight", {c, c, 3, 3}, std_dev);
        h.conv_a_b = b.const_param(prefix + ".conv_a.bias", {c}, 0.0);
        switch (cfg.fusion) {
            case FusionStrategy::ca:
                h.cma_acoustic = b.cma_params(prefix + ".cma_acoustic", c);
                h.cma_vision = b.cma_params(prefix + ".cma_vision", c);
                break;
            case FusionStrategy::res:
                h.res_conv_w = b.param(prefix + ".res_conv.weight", {c, 2 * c, 3, 3},
                                       std::sqrt(2.0 / double(2 * c * 9)));
                h.res_conv_b = b.const_param(prefix + ".res_conv.bias", {c}, 0.0);
                break;
            case FusionStrategy::wbln:
                h.wbln_theta_v = b.const_param(prefix + ".wbln.theta_v", {1}, 0.5);
                h.wbln_theta_a = b.const_param(prefix + ".wbln.theta_a", {1}, 0.5);
                h.wbln_bn_v_gamma = b.const_param(prefix + ".wbln.bn_v_gamma", {c}, 1.0);
                h.wbln_bn_v_beta = b.const_param(prefix + ".wbln.bn_v_beta", {c}, 0.0);
                h.wbln_bn_v_rm = b.state(prefix + ".wbln.bn_v_running_mean", {c}, 0.0);
                h.wbln_bn_v_rv = b.state(prefix + ".wbln.bn_v_running_var", {c}, 1.0);
                h.wbln_bn_a_gamma = b.const_param(prefix + ".wbln.bn_a_gamma", {c}, 1.0);
                h.wbln_bn_a_beta = b.const_param(prefix + ".wbln.bn_a_beta", {c}, 0.0);
                h.wbln_bn_a_rm = b.state(prefix + ".wbln.bn_a_running_mean", {c}, 0.0);
                h.wbln_bn_a_rv = b.state(prefix + ".wbln.bn_a_running_var", {c}, 1.0);
                break;
            default: break;  // cat/avg need no extra parameters
        }
        carry_ch = strategy_channels(cfg.fusion, c) + carry_ch;
    }

    model.head_vision = b.head("head_vision", cfg.channels[2]);
    model.head_acoustic = b.head("head_acoustic", cfg.channels[2]);
    model.head_fusion = b.head("head_fusion", carry_ch);
    return model;
}

std::vector<Tensor> M3FASModel::trainable() const {
    std::vector<Tensor> out;
    out.reserve(parameters.size());
    for (const auto& [name, t] : parameters) out.push_back(t);
    return out;
}

Eigen::Index M3FASModel::parameter_count() const {
    Eigen::Index n = 0;
    for (const auto& [name, t] : parameters) n += t.size();
    return n;
}

Tensor cma(const Tensor& tokens_q, const Tensor& tokens_kv, const CMAParams& p) {
    require(tokens_q.rank() == 3 && tokens_kv.rank() == 3,
            "cma: tokens must be (B, positions, channels)");
    const Eigen::Index B = tokens_q.dim(0), P = tokens_q.dim(1), C = tokens_q.dim(2);
    const Eigen::Index Pk = tokens_kv.dim(1);
    require(tokens_kv.dim(0) == B, "cma: batch mismatch");
    require(tokens_kv.dim(2) == C, "cma: channel mismatch " + shape_str(tokens_q.shape()) +
                                       " vs " + shape_str(tokens_kv.shape()));
    require(p.w_q.shape() == Shape({C, C}), "cma: projection shape mismatch");

    auto project = [&](const Tensor& toks, const Tensor& w, Eigen::Index positions) {
        Tensor flat = reshape(toks, {B * positions, C});
        return reshape(matmul(flat, w), {B, positions, C});
    };
    Tensor q = project(tokens_q, p.w_q, P);
    Tensor k = project(tokens_kv, p.w_k, Pk);
    Tensor v = project(tokens_kv, p.w_v, Pk);

    Tensor scores = scalar_mul(matmul(q, k, false, true), 1.0 / std::sqrt(double(C)));
    Tensor attn = softmax(scores, 2);
    Tensor ctx = matmul(attn, v);
    return add(tokens_q, scale_param(ctx, p.gamma));
}

Tensor fuse_features(const Tensor& z_v, const Tensor& z_a, const Tensor& f_c_prev,
                     const Tensor& pooled_f_v, FusionStrategy strategy, HCAMParams& p,
                     bool training) {
    require(z_v.shape() == z_a.shape(),
            "fuse_features: modality shapes disagree, " + shape_str(z_v.shape()) + " vs " +
                shape_str(z_a.shape()));
    const Eigen::Index C = z_v.dim(1), H = z_v.dim(2), W = z_v.dim(3);

    Tensor fused;
    switch (strategy) {
        case FusionStrategy::cat:
            fused = concat({z_v, z_a}, 1);
            break;
        case FusionStrategy::avg:
            fused = scalar_mul(add(z_v, z_a), 0.5);
            break;
        case FusionStrategy::res: {
            Tensor mixed = conv2d(concat({z_v, z_a}, 1), p.res_conv_w, p.res_conv_b, 1, 1);
            fused = add(pooled_f_v, mixed);
            break;
        }
        case FusionStrategy::wbln: {
            Tensor bn_v = batchnorm2d(z_v, p.wbln_bn_v_gamma, p.wbln_bn_v_beta, p.wbln_bn_v_rm,
                                      p.wbln_bn_v_rv, training);
            Tensor bn_a = batchnorm2d(z_a, p.wbln_bn_a_gamma, p.wbln_bn_a_beta, p.wbln_bn_a_rm,
                                      p.wbln_bn_a_rv, training);
            Tensor w_v = lerp_param(bn_v, layernorm2d(z_v), p.wbln_theta_v);
            Tensor w_a = lerp_param(bn_a, layernorm2d(z_a), p.wbln_theta_a);
            fused = concat({w_v, w_a}, 1);
            break;
        }
        case FusionStrategy::ca: {
            Tensor tok_v = nchw_to_tokens(z_v);
            Tensor tok_a = nchw_to_tokens(z_a);
            Tensor att_a = cma(tok_a, tok_v, p.cma_acoustic);
            Tensor att_v = cma(tok_v, tok_a, p.cma_vision);
            fused = concat({tokens_to_nchw(att_v, C, H, W), tokens_to_nchw(att_a, C, H, W)}, 1);
            break;
        }
    }
    if (f_c_prev.defined()) fused = concat({fused, f_c_prev}, 1);
    return fused;
}

Tensor hcam_forward(const Tensor& f_v, const Tensor& f_a, const Tensor& f_c_prev,
                    HCAMParams& p, FusionStrategy strategy, bool training) {
    require(p.active, "hcam_forward: stage is not active");
    const Eigen::Index g = p.grid;
    Tensor z_v = adaptive_maxpool2d(conv2d(f_v, p.conv_v_w, p.conv_v_b, 1, 1), g, g);
    Tensor z_a = adaptive_maxpool2d(conv2d(f_a, p.conv_a_w, p.conv_a_b, 1, 1), g, g);
    Tensor carry;
    if (f_c_prev.defined()) carry = adaptive_maxpool2d(f_c_prev, g, g);
    Tensor pooled_f_v;
    if (strategy == FusionStrategy::res) pooled_f_v = adaptive_maxpool2d(f_v, g, g);
    return fuse_features(z_v, z_a, carry, pooled_f_v, strategy, p, training);
}

namespace {

Tensor branch_forward(BranchParams& bp, const Tensor& input, bool training,
                      std::array<Tensor, 3>& block_features) {
    Tensor x = input;
    for (int blk = 0; blk < 3; ++blk) {
        for (ConvBnLayer& l : bp.blocks[std::size_t(blk)]) {
            x = conv2d(x, l.weight, l.bias, 1, 1);
            x = batchnorm2d(x, l.bn_gamma, l.bn_beta, l.bn_running_mean, l.bn_running_var,
                            training);
            x = relu(x);
        }
        x = maxpool2d(x, 2);
        block_features[std::size_t(blk)] = x;
    }
    return x;
}

Tensor head_forward(HeadParams& h, const Tensor& features, bool training) {
    Tensor x = batchnorm2d(features, h.bn_gamma, h.bn_beta, h.bn_running_mean,
                           h.bn_running_var, training);
    x = global_avgpool(x);
    x = linear(x, h.fc_w, h.fc_b);
    return reshape(x, {x.dim(0)});
}

}  // namespace

ModelOutput model_forward(M3FASModel& model, const Tensor* image, const Tensor* spectrogram,
                          Route route, bool training) {
    const bool need_vision = route != Route::acoustic;
    const bool need_acoustic = route != Route::vision;
    if (need_vision && (!image || !image->defined()))
        throw MissingModalityError("model_forward: this route requires an image");
    if (need_acoustic && (!spectrogram || !spectrogram->defined()))
        throw MissingModalityError("model_forward: this route requires a spectrogram");

    if (need_vision)
        require(image->rank() == 4 && image->dim(1) == 3 &&
                    image->dim(2) == model.config.vision_size &&
                    image->dim(3) == model.config.vision_size,
                "model_forward: image shape " + shape_str(image->shape()) + " does not match (B,3," +
                    std::to_string(model.config.vision_size) + "," +
                    std::to_string(model.config.vision_size) + ")");
    if (need_acoustic)
        require(spectrogram->rank() == 4 && spectrogram->dim(1) == 1 &&
                    spectrogram->dim(2) == model.config.spec_bins &&
                    spectrogram->dim(3) == model.config.spec_frames,
                "model_forward: spectrogram shape " + shape_str(spectrogram->shape()) +
                    " does not match (B,1," + std::to_string(model.config.spec_bins) + "," +
                    std::to_string(model.config.spec_frames) + ")");

    ModelOutput out;
    std::array<Tensor, 3> f_v, f_a;
    if (need_vision) {
        branch_forward(model.vision, *image, training, f_v);
        out.logit_vision = head_forward(model.head_vision, f_v[2], training);
    }
    if (need_acoustic) {
        branch_forward(model.acoustic, *spectrogram, training, f_a);
        out.logit_acoustic = head_forward(model.head_acoustic, f_a[2], training);
    }
    if (route == Route::fusion) {
        Tensor carry;
        for (int k = 0; k < 3; ++k) {
            HCAMParams& h = model.hcams[std::size_t(k)];
            if (!h.active) continue;
            carry = hcam_forward(f_v[std::size_t(k)], f_a[std::size_t(k)], carry, h,
                                 model.config.fusion, training);
        }
        out.fused_features = carry;
        out.logit_fusion = head_forward(model.head_fusion, carry, training);
    }
    return out;
}

Tensor total_loss(const ModelOutput& out, const Eigen::ArrayXd& labels, double alpha) {
    require(out.logit_vision.defined() && out.logit_acoustic.defined() &&
                out.logit_fusion.defined(),
            "total_loss: needs all three head logits (fusion route)");
    Tensor l_f = bce_loss(out.logit_fusion, labels);
    Tensor l_v = bce_loss(out.logit_vision, labels);
    Tensor l_a = bce_loss(out.logit_acoustic, labels);
    return add(l_f, scalar_mul(add(l_v, l_a), alpha));
}

}  // namespace m3fas
