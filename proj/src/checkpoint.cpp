#include "evssm/checkpoint.hpp"

#include <fstream>
#include <json.hpp>
#include <sstream>

namespace evssm::model {

namespace {

using nlohmann::json;

constexpr const char* kFormat = "evssm-checkpoint";
constexpr int kVersion = 1;

json config_to_json(const ModelConfig& c) {
  json stages = json::array();
  for (const StageConfig& st : c.stages)
    stages.push_back({{"blocks", st.blocks},
                      {"h_in", st.h_in},
                      {"h_state", st.h_state},
                      {"h_out", st.h_out},
                      {"pool_stride", st.pool_stride}});
  return {{"num_channels", c.num_channels},
          {"num_classes", c.num_classes},
          {"embedding_dim", c.embedding_dim},
          {"stages", stages}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.num_channels = j.at("num_channels").get<std::uint32_t>();
  c.num_classes = j.at("num_classes").get<std::uint32_t>();
  c.embedding_dim = j.at("embedding_dim").get<std::uint32_t>();
  for (const json& js : j.at("stages")) {
    StageConfig st;
    st.blocks = js.at("blocks").get<std::uint32_t>();
    st.h_in = js.at("h_in").get<std::uint32_t>();
    st.h_state = js.at("h_state").get<std::uint32_t>();
    st.h_out = js.at("h_out").get<std::uint32_t>();
    st.pool_stride = js.at("pool_stride").get<std::uint32_t>();
    c.stages.push_back(st);
  }
  c.validate();
  return c;
}

}  // namespace

std::string checkpoint_to_json(const Model& model) {
  model.config.validate();
  json doc;
  doc["format"] = kFormat;
  doc["version"] = kVersion;
  doc["config"] = config_to_json(model.config);
  doc["lambda_frozen"] = model.lambda_frozen;

  json tensors = json::object();
  ParamSet& params = const_cast<ParamSet&>(model.params);
  for (const TensorRef& ref : tensor_refs(params)) {
    json data = json::array();
    for (std::size_t i = 0; i < ref.size; ++i) data.push_back(ref.data[i]);
    tensors[ref.name] = std::move(data);
  }
  doc["tensors"] = std::move(tensors);
  return doc.dump(2);
}

Model checkpoint_from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    fail(Errc::bad_magic, std::string("checkpoint is not valid JSON: ") + e.what());
  }
  try {
    require(doc.at("format").get<std::string>() == kFormat, Errc::bad_magic,
            "not an evssm checkpoint");
    require(doc.at("version").get<int>() == kVersion, Errc::bad_version,
            "unsupported checkpoint version");

    Model model;
    model.config = config_from_json(doc.at("config"));
    model.params = make_params(model.config);
    model.lambda_frozen = doc.at("lambda_frozen").get<bool>();

    const json& tensors = doc.at("tensors");
    for (const TensorRef& ref : tensor_refs(model.params)) {
      require(tensors.contains(ref.name), Errc::invariant_violation,
              "checkpoint missing tensor " + ref.name);
      const json& data = tensors.at(ref.name);
      require(data.is_array() && data.size() == ref.size, Errc::dimension_mismatch,
              "tensor " + ref.name + " has wrong size");
      for (std::size_t i = 0; i < ref.size; ++i) ref.data[i] = data[i].get<double>();
      require(all_finite(std::span<const double>(ref.data, ref.size)), Errc::non_finite,
              "tensor " + ref.name + " has non-finite entries");
      if (ref.log_reparam)
        for (std::size_t i = 0; i < ref.size; ++i)
          require(ref.data[i] > 0.0, Errc::invariant_violation,
                  "tensor " + ref.name + " must be positive");
    }
    return model;
  } catch (const json::exception& e) {
    fail(Errc::invariant_violation, std::string("malformed checkpoint: ") + e.what());
  }
}

void save_checkpoint(const Model& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(Errc::io_failure, "cannot open for writing: " + path);
  out << checkpoint_to_json(model) << '\n';
  out.flush();
  if (!out) fail(Errc::io_failure, "write failed: " + path);
}

Model load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::io_failure, "cannot open for reading: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return checkpoint_from_json(ss.str());
}

}  // namespace evssm::model
