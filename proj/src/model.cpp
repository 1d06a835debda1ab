#include "segunet/model.hpp"

#include "segunet/common.hpp"

namespace segunet {

SegUNetImpl::SegUNetImpl(ModelConfig config) : config_(std::move(config)) {
    config_.validate();
    encoder = register_module("encoder", build_encoder(config_.encoder));
    for (int i = 0; i < 4; ++i) {
        RFBConfig rc;
        rc.in_channels = config_.encoder.stage_channels[static_cast<size_t>(i)];
        rc.out_channels = config_.rfb_out_channels;
        rfbs.push_back(register_module("rfb" + std::to_string(i), build_rfb(rc)));
    }
    DecoderConfig dc = config_.decoder;
    dc.channels = config_.rfb_out_channels;
    decoder = register_module("decoder", UDecoder(dc));

    norm_mean_ = register_buffer(
        "norm_mean", torch::tensor({config_.normalization.mean[0], config_.normalization.mean[1],
                                    config_.normalization.mean[2]},
                                   torch::kFloat32)
                         .view({1, 3, 1, 1}));
    norm_std_ = register_buffer(
        "norm_std", torch::tensor({config_.normalization.std[0], config_.normalization.std[1],
                                   config_.normalization.std[2]},
                                  torch::kFloat32)
                        .view({1, 3, 1, 1}));
}

torch::Tensor SegUNetImpl::normalize(const torch::Tensor& x) const {
    return (x - norm_mean_.to(x.dtype())) / norm_std_.to(x.dtype());
}

SegmentationOutputs SegUNetImpl::forward(const torch::Tensor& x) {
    FeaturePyramid pyramid = encoder->forward(normalize(x));
    FeaturePyramid64 compressed = apply_rfb_pyramid(rfbs, pyramid);
    return decoder->forward(compressed, x.size(2), x.size(3));
}

torch::Tensor SegUNetImpl::predict(const torch::Tensor& x) {
    return predict_mask(forward(x));
}

SegUNet build_model(const ModelConfig& config) {
    torch::manual_seed(static_cast<uint64_t>(config.seed));
    SegUNet model(config);
    model->encoder->insert_adapters(config.adapter);
    if (config.freeze_backbone) {
        model->encoder->freeze_backbone();
    }
    return model;
}

}  // namespace segunet
