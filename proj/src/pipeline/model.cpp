#include "cfsynth/pipeline.hpp"

#include "cfsynth/error.hpp"
#include "cfsynth/nn/checkpoint.hpp"

namespace cfs::pipeline {

using nlohmann::json;
using nlohmann::ordered_json;

void ModelConfig::validate() const {
    require(codec.scale_factor == 8, "the pose extractor needs a codec scale factor of 8");
    require(image_size >= 32 && image_size % 32 == 0, "image size must be a multiple of 32");
    require(denoiser.channels.size() == 3, "denoiser needs exactly three resolutions");
    require(denoiser.latent_channels == codec.latent_channels, "denoiser and codec latent channels differ");
    for (int c : denoiser.channels)
        require(c > 0 && c % denoiser.groups == 0 && c % denoiser.heads == 0,
                "denoiser channels must divide by the group and head counts");
    require(denoiser.pose_channels > 0 && denoiser.pose_channels % denoiser.heads == 0,
            "pose channels must divide by the head count");
    require(denoiser.identity_dim > 0 && identity_tokens >= 1 && identity_width >= 2, "identity sizes must be positive");
    require(timesteps >= 1, "timestep count must be at least 1");
    require(std::isfinite(lambda), "lambda must be finite");
    diffusion::parse_schedule_kind(schedule);
}

ordered_json ModelConfig::to_json() const {
    return {{"image_size", image_size},
            {"codec", {{"scale_factor", codec.scale_factor},
                       {"latent_channels", codec.latent_channels},
                       {"width", codec.width}}},
            {"denoiser", {{"pose_channels", denoiser.pose_channels},
                          {"channels", denoiser.channels},
                          {"heads", denoiser.heads},
                          {"time_dim", denoiser.time_dim},
                          {"temb_dim", denoiser.temb_dim},
                          {"groups", denoiser.groups},
                          {"identity_dim", denoiser.identity_dim}}},
            {"identity_tokens", identity_tokens},
            {"identity_width", identity_width},
            {"schedule", schedule},
            {"timesteps", timesteps},
            {"beta_start", beta_start},
            {"beta_end", beta_end},
            {"lambda", lambda},
            {"init_seed", init_seed}};
}

namespace {

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
    require(j.is_object(), where + " must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : allowed) ok = ok || it.key() == k;
        require(ok, "unknown key '" + it.key() + "' in " + where);
    }
}

template <class T>
void read(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

ModelConfig ModelConfig::from_json(const json& j) {
    ModelConfig c;
    try {
        check_keys(j, {"image_size", "codec", "denoiser", "identity_tokens", "identity_width", "schedule", "timesteps",
                       "beta_start", "beta_end", "lambda", "init_seed"},
                   "model config");
        read(j, "image_size", c.image_size);
        if (j.contains("codec")) {
            const json& k = j.at("codec");
            check_keys(k, {"scale_factor", "latent_channels", "width"}, "codec config");
            read(k, "scale_factor", c.codec.scale_factor);
            read(k, "latent_channels", c.codec.latent_channels);
            read(k, "width", c.codec.width);
        }
        if (j.contains("denoiser")) {
            const json& d = j.at("denoiser");
            check_keys(d, {"pose_channels", "channels", "heads", "time_dim", "temb_dim", "groups", "identity_dim"},
                       "denoiser config");
            read(d, "pose_channels", c.denoiser.pose_channels);
            read(d, "channels", c.denoiser.channels);
            read(d, "heads", c.denoiser.heads);
            read(d, "time_dim", c.denoiser.time_dim);
            read(d, "temb_dim", c.denoiser.temb_dim);
            read(d, "groups", c.denoiser.groups);
            read(d, "identity_dim", c.denoiser.identity_dim);
        }
        read(j, "identity_tokens", c.identity_tokens);
        read(j, "identity_width", c.identity_width);
        read(j, "schedule", c.schedule);
        read(j, "timesteps", c.timesteps);
        read(j, "beta_start", c.beta_start);
        read(j, "beta_end", c.beta_end);
        read(j, "lambda", c.lambda);
        read(j, "init_seed", c.init_seed);
    } catch (const json::exception& e) {
        reject(std::string("bad model config: ") + e.what());
    }
    c.denoiser.latent_channels = c.codec.latent_channels;
    c.validate();
    return c;
}

std::string ModelConfig::hash() const {
    const std::string s = to_json().dump();
    return nn::hex64(nn::fnv1a(std::span<const unsigned char>(reinterpret_cast<const unsigned char*>(s.data()), s.size())));
}

std::set<std::string> phase_groups(int phase) {
    switch (phase) {
        case 0:
            return {"pose_extractor",          "reference_backbone",      "reference_spatial_attention",
                    "denoiser_backbone",       "denoiser_self_attention", "denoiser_cross_attention",
                    "input_fusion",            "background_encoder",      "identity_embedder"};
        case 1:
            return kPhase1Groups;
        case 2:
            return kPhase2Groups;
        default:
            reject("training phase must be 0, 1 or 2, got " + std::to_string(phase));
    }
}

Model::Model(const ModelConfig& cfg) : config(cfg), codec(cfg.codec, cfg.init_seed ^ 0x9e3779b97f4a7c15ull) {
    config.denoiser.latent_channels = config.codec.latent_channels;
    config.validate();
    std::mt19937_64 rng(config.init_seed);
    const auto& d = config.denoiser;
    pose = cond::make_pose_extractor(store, rng, d.pose_channels, d.heads);
    cond::ReferenceConfig rc;
    rc.latent_channels = d.latent_channels;
    rc.channels = d.channels;
    rc.heads = d.heads;
    rc.time_dim = d.time_dim;
    rc.temb_dim = d.temb_dim;
    rc.groups = d.groups;
    reference = cond::make_reference_net(store, rng, rc);
    background = cond::make_background_encoder(store, rng, d.latent_channels, d.channels[0], d.channels[1]);
    identity = cond::ConvTokenEmbedder(store, rng, config.identity_tokens, d.identity_dim, config.identity_width);
    denoiser = diffusion::make_denoiser(store, rng, d);
    schedule = diffusion::make_schedule(diffusion::parse_schedule_kind(config.schedule), config.timesteps,
                                        config.beta_start, config.beta_end);
}

void Model::save(const std::filesystem::path& path) const {
    nn::Checkpoint ck;
    ck.metadata = {{"kind", "model"},
                   {"config", config.to_json()},
                   {"config_hash", config.hash()},
                   {"phase", phase},
                   {"step", step},
                   {"codec_frozen", codec.frozen()},
                   {"latent_scale", codec.latent_scale()},
                   {"checksums", json::object()}};
    for (const auto& [g, v] : store.checksums()) ck.metadata["checksums"][g] = nn::hex64(v);
    ck.metadata["checksums"]["codec"] = nn::hex64(codec.checksum());
    ck.arrays = nn::export_params(store);
    for (auto a : nn::export_params(codec.params())) {
        a.name = "codec/" + a.name;
        ck.arrays.push_back(std::move(a));
    }
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    nn::write_checkpoint(path, ck);
}

std::unique_ptr<Model> Model::load(const std::filesystem::path& path) {
    require(std::filesystem::exists(path), "checkpoint " + path.string() + " does not exist");
    const nn::Checkpoint ck = nn::read_checkpoint(path);
    const json& m = ck.metadata;
    require(m.value("kind", "") == "model", path.string() + " is not a model checkpoint");
    auto model = std::make_unique<Model>(ModelConfig::from_json(m.at("config")));
    require(m.value("config_hash", "") == model->config.hash(), path.string() + ": config hash mismatch");
    nn::import_params(model->store, ck);
    nn::Checkpoint codec_ck;
    for (const auto& a : ck.arrays)
        if (a.name.rfind("codec/", 0) == 0) {
            auto c = a;
            c.name = a.name.substr(6);
            codec_ck.arrays.push_back(std::move(c));
        }
    nn::import_params(model->codec.params(), codec_ck);
    model->codec.set_latent_scale(m.value("latent_scale", 1.0));
    if (m.value("codec_frozen", false)) model->codec.freeze();
    model->phase = m.value("phase", -1);
    model->step = m.value("step", 0L);
    return model;
}

std::string checkpoint_config_hash(const std::filesystem::path& path) {
    const nn::Checkpoint ck = nn::read_checkpoint(path);
    return ck.metadata.value("config_hash", "");
}

}  // namespace cfs::pipeline
