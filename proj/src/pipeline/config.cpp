#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "rollcast/binio.hpp"
#include "rollcast/pipeline.hpp"

namespace rollcast::pipeline {

using nlohmann::json;

std::filesystem::path RunConfig::data_file() const {
    return data_path.empty() ? out("data.arrw") : std::filesystem::path(data_path);
}

json to_json(const RunConfig& c) {
    const auto& m = c.model;
    const auto& p = c.pretrain;
    const auto& q = c.dqn;
    const auto& f = c.finetune;
    return {
        {"seed", c.seed},
        {"out_dir", c.out_dir},
        {"data_path", c.data_path},
        {"data",
         {{"num_vars", c.data.num_vars},
          {"lat_points", c.data.lat_points},
          {"lon_points", c.data.lon_points},
          {"num_steps", c.data.num_steps},
          {"base_step_hours", c.data.base_step_hours},
          {"regime", c.data.regime}}},
        {"model",
         {{"patch_size", m.tokenizer.patch_size},
          {"embed_dim", m.tokenizer.embed_dim},
          {"num_blocks", m.num_blocks},
          {"num_heads", m.num_heads},
          {"num_private", m.moe.num_private},
          {"top_k", m.moe.top_k},
          {"private_hidden", m.moe.private_hidden},
          {"shared_hidden", m.moe.shared_hidden},
          {"alpha", m.moe.alpha},
          {"intervals", m.moe.intervals},
          {"interval_probs", m.interval_probs},
          {"ln_eps", m.ln_eps}}},
        {"pretrain",
         {{"steps", p.steps},
          {"batch_size", p.batch_size},
          {"lr", p.lr},
          {"min_lr_fraction", p.min_lr_fraction},
          {"warmup_steps", p.warmup_steps},
          {"weight_decay", p.weight_decay},
          {"clip_norm", p.clip_norm},
          {"aux_weight", p.aux_weight},
          {"log_every", c.log_every},
          {"checkpoint_every", c.checkpoint_every}}},
        {"dqn",
         {{"embed_heads", q.net.num_heads},
          {"hidden", q.net.hidden},
          {"horizon_hours", q.net.horizon_hours},
          {"gamma", q.gamma},
          {"sync_period", q.sync_period},
          {"lr", q.lr},
          {"clip_norm", q.clip_norm},
          {"eps_start", q.eps_start},
          {"eps_end", q.eps_end},
          {"eps_decay_episodes", q.eps_decay_episodes}}},
        {"finetune",
         {{"epochs", f.epochs},
          {"episodes_per_epoch", f.episodes_per_epoch},
          {"iterations_per_epoch", f.iterations_per_epoch},
          {"batch_size", f.batch_size},
          {"buffer_capacity", f.buffer_capacity},
          {"max_age_epochs", f.max_age_epochs},
          {"finetune_episodes", f.finetune_episodes},
          {"t_max", f.t_max},
          {"head_lr", f.head_lr},
          {"leads", f.leads},
          {"omega", c.omega ? json(*c.omega) : json(nullptr)}}},
        {"eval",
         {{"leads", c.eval.leads},
          {"max_init_times", c.eval.max_init_times},
          {"climatology_day_bin", c.eval.climatology_day_bin},
          {"compare_leads", c.eval.compare_leads},
          {"compare_episodes", c.eval.compare_episodes},
          {"random_seed", c.eval.random_seed}}},
        {"numerics", {{"parallel_kernels", c.numerics.parallel_kernels}, {"threads", c.numerics.threads}}},
    };
}

namespace {

bool compatible(const json& def, const json& val) {
    if (def.is_null()) return val.is_null() || val.is_number();
    if (def.is_boolean()) return val.is_boolean();
    if (def.is_number_unsigned()) return val.is_number_unsigned() || (val.is_number_integer() && val.get<std::int64_t>() >= 0);
    if (def.is_number_integer()) return val.is_number_integer();
    if (def.is_number()) return val.is_number();
    if (def.is_string()) return val.is_string();
    if (def.is_array()) return val.is_array();
    if (def.is_object()) return val.is_object();
    return false;
}

template <class T>
T get(const json& j, const char* key) {
    return j.at(key).get<T>();
}

}  // namespace

void strict_merge(json& base, const json& overlay, const std::string& path) {
    if (!overlay.is_object()) throw ConfigError("config" + (path.empty() ? "" : " key '" + path + "'") + " must be an object");
    for (const auto& [key, val] : overlay.items()) {
        const std::string full = path.empty() ? key : path + "." + key;
        if (!base.contains(key)) throw ConfigError("unknown config key '" + full + "'");
        auto& slot = base[key];
        if (!compatible(slot, val))
            throw ConfigError("config key '" + full + "' expects " + std::string(slot.is_null() ? "a number or null" : slot.type_name()) +
                              ", got " + val.type_name());
        if (slot.is_object())
            strict_merge(slot, val, full);
        else
            slot = val;
    }
}

void apply_override(json& j, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
    const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;
    json patch = value;
    std::vector<std::string> parts;
    std::stringstream ss(key);
    for (std::string part; std::getline(ss, part, '.');) parts.push_back(part);
    for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = json{{*it, patch}};
    strict_merge(j, patch);
}

RunConfig from_json(const json& input) {
    json j = to_json(RunConfig{});
    strict_merge(j, input);
    RunConfig c;
    try {
        c.seed = get<std::uint64_t>(j, "seed");
        c.out_dir = get<std::string>(j, "out_dir");
        c.data_path = get<std::string>(j, "data_path");
        const auto& d = j.at("data");
        c.data.num_vars = get<std::size_t>(d, "num_vars");
        c.data.lat_points = get<std::size_t>(d, "lat_points");
        c.data.lon_points = get<std::size_t>(d, "lon_points");
        c.data.num_steps = get<std::size_t>(d, "num_steps");
        c.data.base_step_hours = get<std::int64_t>(d, "base_step_hours");
        c.data.regime = d.at("regime").get<gridio::RegimeConfig>();

        const auto& m = j.at("model");
        c.model.tokenizer.patch_size = get<std::size_t>(m, "patch_size");
        c.model.tokenizer.embed_dim = get<std::size_t>(m, "embed_dim");
        c.model.num_blocks = get<std::size_t>(m, "num_blocks");
        c.model.num_heads = get<std::size_t>(m, "num_heads");
        c.model.moe.num_private = get<std::size_t>(m, "num_private");
        c.model.moe.top_k = get<std::size_t>(m, "top_k");
        c.model.moe.private_hidden = get<std::size_t>(m, "private_hidden");
        c.model.moe.shared_hidden = get<std::size_t>(m, "shared_hidden");
        c.model.moe.alpha = get<double>(m, "alpha");
        c.model.moe.intervals = get<std::vector<std::int64_t>>(m, "intervals");
        c.model.moe.embed_dim = c.model.tokenizer.embed_dim;
        c.model.interval_probs = get<std::vector<double>>(m, "interval_probs");
        c.model.ln_eps = get<double>(m, "ln_eps");

        const auto& p = j.at("pretrain");
        c.pretrain.steps = get<std::size_t>(p, "steps");
        c.pretrain.batch_size = get<std::size_t>(p, "batch_size");
        c.pretrain.lr = get<double>(p, "lr");
        c.pretrain.min_lr_fraction = get<double>(p, "min_lr_fraction");
        c.pretrain.warmup_steps = get<std::size_t>(p, "warmup_steps");
        c.pretrain.weight_decay = get<double>(p, "weight_decay");
        c.pretrain.clip_norm = get<double>(p, "clip_norm");
        c.pretrain.aux_weight = get<double>(p, "aux_weight");
        c.pretrain.seed = c.seed;
        c.log_every = get<std::size_t>(p, "log_every");
        c.checkpoint_every = get<std::size_t>(p, "checkpoint_every");

        const auto& q = j.at("dqn");
        c.dqn.net.embed_dim = c.model.tokenizer.embed_dim;
        c.dqn.net.num_heads = get<std::size_t>(q, "embed_heads");
        c.dqn.net.hidden = get<std::size_t>(q, "hidden");
        c.dqn.net.horizon_hours = get<double>(q, "horizon_hours");
        c.dqn.gamma = get<double>(q, "gamma");
        c.dqn.sync_period = get<std::size_t>(q, "sync_period");
        c.dqn.lr = get<double>(q, "lr");
        c.dqn.clip_norm = get<double>(q, "clip_norm");
        c.dqn.eps_start = get<double>(q, "eps_start");
        c.dqn.eps_end = get<double>(q, "eps_end");
        c.dqn.eps_decay_episodes = get<std::size_t>(q, "eps_decay_episodes");

        const auto& f = j.at("finetune");
        c.finetune.epochs = get<std::size_t>(f, "epochs");
        c.finetune.episodes_per_epoch = get<std::size_t>(f, "episodes_per_epoch");
        c.finetune.iterations_per_epoch = get<std::size_t>(f, "iterations_per_epoch");
        c.finetune.batch_size = get<std::size_t>(f, "batch_size");
        c.finetune.buffer_capacity = get<std::size_t>(f, "buffer_capacity");
        c.finetune.max_age_epochs = get<std::size_t>(f, "max_age_epochs");
        c.finetune.finetune_episodes = get<std::size_t>(f, "finetune_episodes");
        c.finetune.t_max = get<std::size_t>(f, "t_max");
        c.finetune.head_lr = get<double>(f, "head_lr");
        c.finetune.leads = get<std::vector<std::int64_t>>(f, "leads");
        c.finetune.seed = c.seed;
        if (!f.at("omega").is_null()) c.omega = f.at("omega").get<double>();

        const auto& e = j.at("eval");
        c.eval.leads = get<std::vector<std::int64_t>>(e, "leads");
        c.eval.max_init_times = get<std::size_t>(e, "max_init_times");
        c.eval.climatology_day_bin = get<int>(e, "climatology_day_bin");
        c.eval.compare_leads = get<std::vector<std::int64_t>>(e, "compare_leads");
        c.eval.compare_episodes = get<std::size_t>(e, "compare_episodes");
        c.eval.random_seed = get<std::uint64_t>(e, "random_seed");

        const auto& n = j.at("numerics");
        c.numerics.parallel_kernels = get<bool>(n, "parallel_kernels");
        c.numerics.threads = get<int>(n, "threads");
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    return c;
}

void validate(const RunConfig& c) {
    auto need = [](bool ok, const std::string& msg) {
        if (!ok) throw ConfigError("config: " + msg);
    };
    need(!c.out_dir.empty(), "out_dir must not be empty");
    need(c.data.num_steps >= 2, "data.num_steps must be >= 2");
    need(c.data.base_step_hours > 0, "data.base_step_hours must be positive");
    need(c.data.regime.var_means.size() == c.data.num_vars && c.data.regime.var_scales.size() == c.data.num_vars &&
             c.data.regime.var_speed_factor.size() == c.data.num_vars,
         "data.regime per-variable lists must have num_vars entries");
    try {
        auto spec = gridio::GridSpec::equirectangular(c.data.num_vars, c.data.lat_points, c.data.lon_points,
                                                      c.data.base_step_hours);
        spec.validate();
        auto m = c.model;
        m.validate(spec);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    need(c.pretrain.batch_size >= 1, "pretrain.batch_size must be >= 1");
    need(c.pretrain.lr > 0.0, "pretrain.lr must be positive");
    need(c.pretrain.min_lr_fraction >= 0.0 && c.pretrain.min_lr_fraction <= 1.0,
         "pretrain.min_lr_fraction must be in [0, 1]");
    need(c.pretrain.aux_weight >= 0.0, "pretrain.aux_weight must be non-negative");
    need(c.log_every >= 1, "pretrain.log_every must be >= 1");
    need(c.dqn.net.num_heads >= 1 && c.model.tokenizer.embed_dim % c.dqn.net.num_heads == 0,
         "dqn.embed_heads must divide model.embed_dim");
    need(c.dqn.net.horizon_hours > 0.0, "dqn.horizon_hours must be positive");
    need(c.dqn.gamma >= 0.0 && c.dqn.gamma <= 1.0, "dqn.gamma must be in [0, 1]");
    need(c.dqn.sync_period >= 1, "dqn.sync_period must be >= 1");
    need(c.dqn.eps_start >= 0.0 && c.dqn.eps_start <= 1.0 && c.dqn.eps_end >= 0.0 && c.dqn.eps_end <= 1.0,
         "dqn epsilons must be in [0, 1]");
    need(c.finetune.batch_size >= 1 && c.finetune.buffer_capacity >= 1, "finetune batch and buffer must be >= 1");
    need(!c.finetune.leads.empty(), "finetune.leads must not be empty");
    for (auto l : c.finetune.leads) need(l > 0 && l % 6 == 0, "finetune.leads must be positive multiples of 6h");
    for (auto l : c.eval.leads) need(l > 0 && l % 6 == 0, "eval.leads must be positive multiples of 6h");
    for (auto l : c.eval.compare_leads) need(l > 0 && l % 6 == 0, "eval.compare_leads must be positive multiples of 6h");
    need(c.eval.climatology_day_bin >= 1, "eval.climatology_day_bin must be >= 1");
    need(c.numerics.threads >= 0, "numerics.threads must be >= 0");
}

RunConfig load_config(const std::optional<std::filesystem::path>& file, const std::vector<std::string>& overrides) {
    json j = to_json(RunConfig{});
    if (file) {
        std::ifstream in(*file);
        if (!in) throw IoError("cannot open config file " + file->string());
        json user = json::parse(in, nullptr, false, true);
        if (user.is_discarded()) throw ConfigError("config file " + file->string() + " is not valid JSON");
        strict_merge(j, user);
    }
    for (const auto& o : overrides) apply_override(j, o);
    RunConfig c = from_json(j);
    validate(c);
    return c;
}

std::uint64_t config_hash(const RunConfig& c) {
    const std::string s = to_json(c).dump();
    return binio::fnv1a64(reinterpret_cast<const unsigned char*>(s.data()), s.size());
}

std::string provenance_line(const RunConfig& c) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "# rollcast %s config_hash=%016llx seed=%llu", kVersion,
                  static_cast<unsigned long long>(config_hash(c)), static_cast<unsigned long long>(c.seed));
    return buf;
}

std::string fmt(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", x);
    return buf;
}

CsvWriter::CsvWriter(const std::filesystem::path& path, const std::string& provenance,
                     const std::vector<std::string>& header, bool append)
    : path_(path), columns_(header.size()) {
    const bool existing = append && std::filesystem::exists(path);
    out_.open(path, existing ? std::ios::app : std::ios::trunc);
    if (!out_) throw IoError("cannot write " + path.string());
    if (existing) return;
    out_ << provenance << '\n';
    for (std::size_t i = 0; i < header.size(); ++i) out_ << (i ? "," : "") << header[i];
    out_ << '\n';
}

void CsvWriter::row(const std::vector<std::string>& cells) {
    if (cells.size() != columns_)
        throw std::logic_error("csv " + path_.string() + ": row has " + std::to_string(cells.size()) + " cells, header " +
                               std::to_string(columns_));
    for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
    out_ << '\n';
    if (!out_) throw IoError("write failed for " + path_.string());
}

}  // namespace rollcast::pipeline
