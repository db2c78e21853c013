#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cife/errors.hpp"
#include "cife/models.hpp"

namespace cife {

namespace {

using nlohmann::json;

constexpr const char* kFormat = "cife-checkpoint";
constexpr int kVersion = 1;

json mlp_to_json(const Mlp& mlp) {
  json params = json::array();
  for (const Parameter* p : mlp.parameters()) {
    params.push_back({{"name", p->name},
                      {"shape", p->value.shape()},
                      {"data", std::vector<double>(p->value.data().begin(),
                                                   p->value.data().end())}});
  }
  return {{"name", mlp.name()},
          {"head", to_string(mlp.head())},
          {"widths", mlp.widths()},
          {"parameters", std::move(params)}};
}

Mlp mlp_from_json(const json& j) {
  Mlp mlp(j.at("name").get<std::string>(),
          j.at("widths").get<std::vector<std::size_t>>(),
          parse_head(j.at("head").get<std::string>()));
  const json& params = j.at("parameters");
  auto slots = mlp.parameters();
  if (params.size() != slots.size()) {
    throw ValidationError("checkpoint component " + mlp.name() + " has " +
                          std::to_string(params.size()) +
                          " parameter arrays, expected " +
                          std::to_string(slots.size()));
  }
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const json& pj = params[i];
    Parameter& slot = *slots[i];
    const auto name = pj.at("name").get<std::string>();
    const auto shape = pj.at("shape").get<Shape>();
    if (name != slot.name || shape != slot.value.shape()) {
      throw ValidationError("checkpoint parameter " + name + " " +
                            shape_string(shape) + " does not match " +
                            slot.name + " " + shape_string(slot.value.shape()));
    }
    slot.value = Tensor(shape, pj.at("data").get<std::vector<double>>());
  }
  return mlp;
}

}  // namespace

std::string checkpoint_to_string(const Checkpoint& ckpt) {
  if (!model_matches(ckpt.model, ckpt.variant)) {
    throw InvalidArgument("checkpoint model does not match its variant");
  }
  json components = json::object();
  bool conditioned = false;
  if (const auto* m = std::get_if<CifeModel>(&ckpt.model)) {
    conditioned = m->conditioned();
    components["F_s"] = mlp_to_json(m->fs);
    components["F_d"] = mlp_to_json(m->fd);
    components["C"] = mlp_to_json(m->classifier);
    components["D_d"] = mlp_to_json(m->domain_disc);
    components["D_t"] = mlp_to_json(m->category_disc);
  } else {
    const auto& d = std::get<DannModel>(ckpt.model);
    components["F"] = mlp_to_json(d.features);
    components["C"] = mlp_to_json(d.classifier);
    components["D"] = mlp_to_json(d.domain_disc);
  }
  json doc = {{"format", kFormat},
              {"version", kVersion},
              {"variant", to_string(ckpt.variant)},
              {"conditioned", conditioned},
              {"config", ckpt.config},
              {"config_hash", ckpt.config_hash},
              {"seed", ckpt.seed},
              {"components", std::move(components)}};
  return doc.dump(1) + "\n";
}

Checkpoint checkpoint_from_string(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("checkpoint is not valid JSON: ") + e.what(),
                     e.byte);
  }
  try {
    if (doc.at("format") != kFormat) throw ValidationError("not a cife checkpoint");
    if (doc.at("version") != kVersion) {
      throw ValidationError("unsupported checkpoint version");
    }
    const Variant variant = parse_variant(doc.at("variant").get<std::string>());
    const json& c = doc.at("components");
    AnyModel model = is_cife(variant)
                         ? AnyModel(CifeModel(mlp_from_json(c.at("F_s")),
                                              mlp_from_json(c.at("F_d")),
                                              mlp_from_json(c.at("C")),
                                              mlp_from_json(c.at("D_d")),
                                              mlp_from_json(c.at("D_t")),
                                              doc.at("conditioned").get<bool>()))
                         : AnyModel(DannModel(mlp_from_json(c.at("F")),
                                              mlp_from_json(c.at("C")),
                                              mlp_from_json(c.at("D"))));
    if (!model_matches(model, variant)) {
      throw ValidationError("checkpoint components do not match variant");
    }
    return Checkpoint{variant, std::move(model),
                      doc.at("config").get<std::map<std::string, std::string>>(),
                      doc.at("config_hash").get<std::string>(),
                      doc.at("seed").get<std::uint64_t>()};
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed checkpoint: ") + e.what());
  }
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path + " for writing");
  out << checkpoint_to_string(ckpt);
  if (!out) throw Error("failed writing " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return checkpoint_from_string(buf.str());
}

}  // namespace cife
