#include "mwp/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "mwp/errors.hpp"

namespace mwp {

namespace {

std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_bool(bool v) { return v ? "true" : "false"; }

[[noreturn]] void bad_value(const std::string& key, const std::string& value,
                            const char* expected) {
  throw ConfigError("config key " + key + ": cannot parse \"" + value + "\" as " + expected);
}

double parse_double(const std::string& key, const std::string& value) {
  char* end = nullptr;
  double v = std::strtod(value.c_str(), &end);
  if (end != value.c_str() + value.size() || value.empty()) bad_value(key, value, "a number");
  return v;
}

long long parse_int(const std::string& key, const std::string& value) {
  char* end = nullptr;
  long long v = std::strtoll(value.c_str(), &end, 10);
  if (end != value.c_str() + value.size() || value.empty()) bad_value(key, value, "an integer");
  return v;
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  char* end = nullptr;
  unsigned long long v = std::strtoull(value.c_str(), &end, 10);
  if (end != value.c_str() + value.size() || value.empty() || value[0] == '-')
    bad_value(key, value, "an unsigned integer");
  return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  bad_value(key, value, "a boolean (true/false)");
}

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace

KvMap model_config_to_kv(const ModelConfig& cfg) {
  KvMap kv;
  kv["vit.image_side"] = std::to_string(cfg.vit.image_side);
  kv["vit.patch_side"] = std::to_string(cfg.vit.patch_side);
  kv["vit.embed_dim"] = std::to_string(cfg.vit.embed_dim);
  kv["vit.layers"] = std::to_string(cfg.vit.layers);
  kv["vit.heads"] = std::to_string(cfg.vit.heads);
  kv["vit.mlp_ratio"] = fmt_g(cfg.vit.mlp_ratio);
  kv["vit.dropout"] = fmt_g(cfg.vit.dropout_p);
  kv["fusion.mode"] = to_string(cfg.fusion.mode);
  kv["fusion.heads"] = std::to_string(cfg.fusion.heads);
  kv["fusion.stages"] = std::to_string(cfg.fusion.stages);
  kv["fusion.attn_dim"] = std::to_string(cfg.fusion.attn_dim);
  kv["fusion.fused_dim"] = std::to_string(cfg.fusion.fused_dim);
  kv["fusion.dropout"] = fmt_g(cfg.fusion.dropout_p);
  kv["fusion.token_kv"] = fmt_bool(cfg.fusion.token_kv);
  kv["head.dropout"] = fmt_g(cfg.head_dropout);
  kv["model.categories"] = std::to_string(cfg.categories);
  kv["model.log_target"] = fmt_bool(cfg.log_target);
  return kv;
}

namespace {

std::string kv_at(const KvMap& kv, const std::string& key) {
  auto it = kv.find(key);
  if (it == kv.end()) throw ConfigError("config snapshot is missing key " + key);
  return it->second;
}

}  // namespace

ModelConfig model_config_from_kv(const KvMap& kv) {
  ModelConfig cfg;
  cfg.vit.image_side = static_cast<int>(parse_int("vit.image_side", kv_at(kv, "vit.image_side")));
  cfg.vit.patch_side = static_cast<int>(parse_int("vit.patch_side", kv_at(kv, "vit.patch_side")));
  cfg.vit.embed_dim = static_cast<int>(parse_int("vit.embed_dim", kv_at(kv, "vit.embed_dim")));
  cfg.vit.layers = static_cast<int>(parse_int("vit.layers", kv_at(kv, "vit.layers")));
  cfg.vit.heads = static_cast<int>(parse_int("vit.heads", kv_at(kv, "vit.heads")));
  cfg.vit.mlp_ratio = parse_double("vit.mlp_ratio", kv_at(kv, "vit.mlp_ratio"));
  cfg.vit.dropout_p = parse_double("vit.dropout", kv_at(kv, "vit.dropout"));
  cfg.fusion.mode = fusion_mode_from_string(kv_at(kv, "fusion.mode"));
  cfg.fusion.heads = static_cast<int>(parse_int("fusion.heads", kv_at(kv, "fusion.heads")));
  cfg.fusion.stages = static_cast<int>(parse_int("fusion.stages", kv_at(kv, "fusion.stages")));
  cfg.fusion.attn_dim = static_cast<int>(parse_int("fusion.attn_dim", kv_at(kv, "fusion.attn_dim")));
  cfg.fusion.fused_dim =
      static_cast<int>(parse_int("fusion.fused_dim", kv_at(kv, "fusion.fused_dim")));
  cfg.fusion.dropout_p = parse_double("fusion.dropout", kv_at(kv, "fusion.dropout"));
  cfg.fusion.token_kv = parse_bool("fusion.token_kv", kv_at(kv, "fusion.token_kv"));
  cfg.head_dropout = parse_double("head.dropout", kv_at(kv, "head.dropout"));
  cfg.categories = static_cast<int>(parse_int("model.categories", kv_at(kv, "model.categories")));
  cfg.log_target = parse_bool("model.log_target", kv_at(kv, "model.log_target"));
  return cfg;
}

KvMap train_config_to_kv(const TrainConfig& cfg) {
  KvMap kv;
  kv["train.epochs"] = std::to_string(cfg.epochs);
  kv["train.warmup_epochs"] = std::to_string(cfg.warmup_epochs);
  kv["train.batch_size"] = std::to_string(cfg.batch_size);
  kv["train.lr_head"] = fmt_g(cfg.lr_head);
  kv["train.lr_backbone"] = fmt_g(cfg.lr_backbone);
  kv["train.lr_min"] = fmt_g(cfg.lr_min);
  kv["train.restart_period"] = std::to_string(cfg.restart_period);
  kv["train.restart_mult"] = fmt_g(cfg.restart_mult);
  kv["train.weight_decay"] = fmt_g(cfg.weight_decay);
  kv["train.ema_decay"] = fmt_g(cfg.ema_decay);
  kv["train.ema_ramp"] = fmt_bool(cfg.ema_ramp);
  kv["train.clip_norm"] = fmt_g(cfg.clip_norm);
  kv["train.loss"] = to_string(cfg.loss);
  kv["train.augment"] = fmt_bool(cfg.augment);
  kv["train.seed"] = std::to_string(cfg.seed);
  return kv;
}

TrainConfig train_config_from_kv(const KvMap& kv) {
  TrainConfig cfg;
  cfg.epochs = static_cast<int>(parse_int("train.epochs", kv_at(kv, "train.epochs")));
  cfg.warmup_epochs =
      static_cast<int>(parse_int("train.warmup_epochs", kv_at(kv, "train.warmup_epochs")));
  cfg.batch_size = static_cast<int>(parse_int("train.batch_size", kv_at(kv, "train.batch_size")));
  cfg.lr_head = parse_double("train.lr_head", kv_at(kv, "train.lr_head"));
  cfg.lr_backbone = parse_double("train.lr_backbone", kv_at(kv, "train.lr_backbone"));
  cfg.lr_min = parse_double("train.lr_min", kv_at(kv, "train.lr_min"));
  cfg.restart_period =
      static_cast<int>(parse_int("train.restart_period", kv_at(kv, "train.restart_period")));
  cfg.restart_mult = parse_double("train.restart_mult", kv_at(kv, "train.restart_mult"));
  cfg.weight_decay = parse_double("train.weight_decay", kv_at(kv, "train.weight_decay"));
  cfg.ema_decay = parse_double("train.ema_decay", kv_at(kv, "train.ema_decay"));
  cfg.ema_ramp = parse_bool("train.ema_ramp", kv_at(kv, "train.ema_ramp"));
  cfg.clip_norm = parse_double("train.clip_norm", kv_at(kv, "train.clip_norm"));
  cfg.loss = loss_from_string(kv_at(kv, "train.loss"));
  cfg.augment = parse_bool("train.augment", kv_at(kv, "train.augment"));
  cfg.seed = parse_u64("train.seed", kv_at(kv, "train.seed"));
  return cfg;
}

void apply_config_kv(RunConfig& rc, const std::string& key, const std::string& value) {
  if (key.rfind("category.", 0) == 0) {
    std::size_t dot = key.find('.', 9);
    if (dot == std::string::npos) throw ConfigError("unknown config key: " + key);
    std::size_t idx = static_cast<std::size_t>(parse_int(key, key.substr(9, dot - 9)));
    std::string field = key.substr(dot + 1);
    if (idx > rc.gen.categories.size())
      throw ConfigError("config key " + key + ": category indices must be contiguous (have " +
                        std::to_string(rc.gen.categories.size()) + " categories)");
    if (idx == rc.gen.categories.size()) rc.gen.categories.emplace_back();
    CategorySpec& c = rc.gen.categories[idx];
    if (field == "name")
      c.name = value;
    else if (field == "share")
      c.share = parse_double(key, value);
    else if (field == "weight_min")
      c.weight_min = parse_double(key, value);
    else if (field == "weight_max")
      c.weight_max = parse_double(key, value);
    else if (field == "volume_min")
      c.volume_min = parse_double(key, value);
    else if (field == "volume_max")
      c.volume_max = parse_double(key, value);
    else if (field == "texture_seed")
      c.texture_seed = parse_u64(key, value);
    else
      throw ConfigError("unknown config key: " + key);
    c.derive_density_band();
    return;
  }
  if (key == "gen.n")
    rc.gen.n = static_cast<int>(parse_int(key, value));
  else if (key == "gen.seed")
    rc.gen.seed = parse_u64(key, value);
  else if (key == "gen.image_side")
    rc.gen.image_side = static_cast<int>(parse_int(key, value));
  else if (key == "vit.image_side")
    rc.model.vit.image_side = static_cast<int>(parse_int(key, value));
  else if (key == "vit.patch_side")
    rc.model.vit.patch_side = static_cast<int>(parse_int(key, value));
  else if (key == "vit.embed_dim")
    rc.model.vit.embed_dim = static_cast<int>(parse_int(key, value));
  else if (key == "vit.layers")
    rc.model.vit.layers = static_cast<int>(parse_int(key, value));
  else if (key == "vit.heads")
    rc.model.vit.heads = static_cast<int>(parse_int(key, value));
  else if (key == "vit.mlp_ratio")
    rc.model.vit.mlp_ratio = parse_double(key, value);
  else if (key == "vit.dropout")
    rc.model.vit.dropout_p = parse_double(key, value);
  else if (key == "fusion.mode")
    rc.model.fusion.mode = fusion_mode_from_string(value);
  else if (key == "fusion.heads")
    rc.model.fusion.heads = static_cast<int>(parse_int(key, value));
  else if (key == "fusion.stages")
    rc.model.fusion.stages = static_cast<int>(parse_int(key, value));
  else if (key == "fusion.attn_dim")
    rc.model.fusion.attn_dim = static_cast<int>(parse_int(key, value));
  else if (key == "fusion.fused_dim")
    rc.model.fusion.fused_dim = static_cast<int>(parse_int(key, value));
  else if (key == "fusion.dropout")
    rc.model.fusion.dropout_p = parse_double(key, value);
  else if (key == "fusion.token_kv")
    rc.model.fusion.token_kv = parse_bool(key, value);
  else if (key == "head.dropout")
    rc.model.head_dropout = parse_double(key, value);
  else if (key == "model.categories")
    rc.model.categories = static_cast<int>(parse_int(key, value));
  else if (key == "model.log_target")
    rc.model.log_target = parse_bool(key, value);
  else if (key == "train.epochs")
    rc.train.epochs = static_cast<int>(parse_int(key, value));
  else if (key == "train.warmup_epochs")
    rc.train.warmup_epochs = static_cast<int>(parse_int(key, value));
  else if (key == "train.batch_size")
    rc.train.batch_size = static_cast<int>(parse_int(key, value));
  else if (key == "train.lr_head")
    rc.train.lr_head = parse_double(key, value);
  else if (key == "train.lr_backbone")
    rc.train.lr_backbone = parse_double(key, value);
  else if (key == "train.lr_min")
    rc.train.lr_min = parse_double(key, value);
  else if (key == "train.restart_period")
    rc.train.restart_period = static_cast<int>(parse_int(key, value));
  else if (key == "train.restart_mult")
    rc.train.restart_mult = parse_double(key, value);
  else if (key == "train.weight_decay")
    rc.train.weight_decay = parse_double(key, value);
  else if (key == "train.ema_decay")
    rc.train.ema_decay = parse_double(key, value);
  else if (key == "train.ema_ramp")
    rc.train.ema_ramp = parse_bool(key, value);
  else if (key == "train.clip_norm")
    rc.train.clip_norm = parse_double(key, value);
  else if (key == "train.loss")
    rc.train.loss = loss_from_string(value);
  else if (key == "train.augment")
    rc.train.augment = parse_bool(key, value);
  else if (key == "train.seed")
    rc.train.seed = parse_u64(key, value);
  else if (key == "split.train")
    rc.split_train = parse_double(key, value);
  else if (key == "split.val")
    rc.split_val = parse_double(key, value);
  else if (key == "split.test")
    rc.split_test = parse_double(key, value);
  else if (key == "split.seed")
    rc.split_seed = parse_u64(key, value);
  else if (key == "eval.split") {
    if (value != "train" && value != "val" && value != "test")
      throw ConfigError("eval.split must be train, val or test, got " + value);
    rc.eval_split = value;
  } else if (key == "threads") {
    rc.threads = static_cast<int>(parse_int(key, value));
    if (rc.threads < 1) throw ConfigError("threads must be at least 1");
  } else {
    throw ConfigError("unknown config key: " + key);
  }
}

RunConfig load_config_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config file: " + path.string());
  RunConfig rc;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path.string() + ":" + std::to_string(lineno) +
                        ": expected `key = value`, got \"" + line + "\"");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": empty key");
    apply_config_kv(rc, key, value);
  }
  return rc;
}

std::string render_config(const RunConfig& rc) {
  std::ostringstream os;
  os << "gen.n = " << rc.gen.n << "\n";
  os << "gen.seed = " << rc.gen.seed << "\n";
  os << "gen.image_side = " << rc.gen.image_side << "\n";
  for (std::size_t i = 0; i < rc.gen.categories.size(); ++i) {
    const CategorySpec& c = rc.gen.categories[i];
    std::string p = "category." + std::to_string(i) + ".";
    os << p << "name = " << c.name << "\n";
    os << p << "share = " << fmt_g(c.share) << "\n";
    os << p << "weight_min = " << fmt_g(c.weight_min) << "\n";
    os << p << "weight_max = " << fmt_g(c.weight_max) << "\n";
    os << p << "volume_min = " << fmt_g(c.volume_min) << "\n";
    os << p << "volume_max = " << fmt_g(c.volume_max) << "\n";
    os << p << "texture_seed = " << c.texture_seed << "\n";
  }
  for (const auto& [k, v] : model_config_to_kv(rc.model)) os << k << " = " << v << "\n";
  for (const auto& [k, v] : train_config_to_kv(rc.train)) os << k << " = " << v << "\n";
  os << "split.train = " << fmt_g(rc.split_train) << "\n";
  os << "split.val = " << fmt_g(rc.split_val) << "\n";
  os << "split.test = " << fmt_g(rc.split_test) << "\n";
  os << "split.seed = " << rc.split_seed << "\n";
  os << "eval.split = " << rc.eval_split << "\n";
  os << "threads = " << rc.threads << "\n";
  return os.str();
}

void write_config_echo(const RunConfig& rc, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream os(dir / "config.echo.txt");
  if (!os) throw IoError("cannot write config echo in " + dir.string());
  os << render_config(rc);
}

}  // namespace mwp
