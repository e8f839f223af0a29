#include "traplab/checkpoint.hpp"

namespace traplab {

using nlohmann::json;

json net_to_json(const DenseNet<double>& net) {
  json layers = json::array();
  for (const auto& layer : net.layers()) {
    std::vector<double> weights;
    weights.reserve(layer.weights.size());
    for (Index i = 0; i < layer.weights.rows(); ++i)
      for (Index k = 0; k < layer.weights.cols(); ++k) weights.push_back(layer.weights(i, k));
    layers.push_back({{"rows", layer.weights.rows()},
                      {"cols", layer.weights.cols()},
                      {"weights", std::move(weights)},
                      {"bias", std::vector<double>(layer.bias.data(), layer.bias.data() + layer.bias.size())}});
  }
  return {{"dims", net.dims()}, {"activation", to_string(net.hidden_activation())}, {"layers", std::move(layers)}};
}

DenseNet<double> net_from_json(const json& j) {
  try {
    std::vector<DenseLayer<double>> layers;
    for (const auto& l : j.at("layers")) {
      const Index rows = l.at("rows").get<Index>();
      const Index cols = l.at("cols").get<Index>();
      const auto w = l.at("weights").get<std::vector<double>>();
      const auto b = l.at("bias").get<std::vector<double>>();
      if (rows <= 0 || cols <= 0 || static_cast<Index>(w.size()) != rows * cols ||
          static_cast<Index>(b.size()) != rows)
        throw ParseError("checkpoint layer shape does not match its data");
      DenseLayer<double> layer{MatrixXd(rows, cols), Eigen::Map<const VectorXd>(b.data(), rows)};
      for (Index i = 0; i < rows; ++i)
        for (Index k = 0; k < cols; ++k) layer.weights(i, k) = w[i * cols + k];
      layers.push_back(std::move(layer));
    }
    DenseNet<double> net(std::move(layers), parse_activation(j.at("activation").get<std::string>()));
    if (net.dims() != j.at("dims").get<std::vector<Index>>()) throw ParseError("checkpoint dims disagree with layers");
    if (!net.all_finite()) throw ParseError("checkpoint contains non-finite weights");
    return net;
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed network in checkpoint: ") + e.what());
  }
}

json parse_json_document(std::string_view bytes, std::string_view what) {
  try {
    return json::parse(bytes);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string(what) + ": unreadable (byte " + std::to_string(e.byte) + "): " + e.what());
  }
}

namespace {

void check_header(const json& j, std::string_view kind) {
  if (!j.is_object() || j.value("format", "") != "traplab-checkpoint")
    throw ParseError("not a traplab checkpoint");
  if (j.value("version", -1) != kCheckpointVersion)
    throw ParseError("unsupported checkpoint version " + std::to_string(j.value("version", -1)));
  if (j.value("kind", "") != kind)
    throw ParseError("checkpoint holds a " + j.value("kind", std::string("?")) + ", expected " + std::string(kind));
}

}  // namespace

json to_json(const EmbeddingCheckpoint& ckpt) {
  return {{"format", "traplab-checkpoint"},
          {"version", kCheckpointVersion},
          {"kind", "embedding"},
          {"loss", to_string(ckpt.loss)},
          {"embedding_dim", ckpt.net.output_dim()},
          {"seed_lineage", ckpt.seed_lineage},
          {"net", net_to_json(ckpt.net)}};
}

EmbeddingCheckpoint embedding_checkpoint_from_json(const json& j) {
  check_header(j, "embedding");
  try {
    EmbeddingCheckpoint ckpt;
    ckpt.net = net_from_json(j.at("net"));
    ckpt.loss = parse_embedding_loss(j.at("loss").get<std::string>());
    ckpt.seed_lineage = j.at("seed_lineage").get<std::vector<std::uint64_t>>();
    if (j.at("embedding_dim").get<Index>() != ckpt.net.output_dim())
      throw ParseError("checkpoint embedding_dim disagrees with the network");
    return ckpt;
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed embedding checkpoint: ") + e.what());
  }
}

json to_json(const ClassifierCheckpoint& ckpt) {
  return {{"format", "traplab-checkpoint"},
          {"version", kCheckpointVersion},
          {"kind", "classifier"},
          {"classes", ckpt.class_names},
          {"seed_lineage", ckpt.seed_lineage},
          {"net", net_to_json(ckpt.classifier.net())}};
}

ClassifierCheckpoint classifier_checkpoint_from_json(const json& j) {
  check_header(j, "classifier");
  try {
    ClassifierCheckpoint ckpt;
    ckpt.classifier = MlpClassifier(net_from_json(j.at("net")));
    ckpt.class_names = j.at("classes").get<std::vector<std::string>>();
    ckpt.seed_lineage = j.at("seed_lineage").get<std::vector<std::uint64_t>>();
    if (static_cast<Index>(ckpt.class_names.size()) != ckpt.classifier.num_classes())
      throw ParseError("classifier checkpoint: class table size disagrees with the output layer");
    return ckpt;
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed classifier checkpoint: ") + e.what());
  }
}

std::string save_embedding_checkpoint(const EmbeddingCheckpoint& ckpt) { return to_json(ckpt).dump(); }

EmbeddingCheckpoint load_embedding_checkpoint(std::string_view bytes) {
  return embedding_checkpoint_from_json(parse_json_document(bytes, "embedding checkpoint"));
}

std::string save_classifier_checkpoint(const ClassifierCheckpoint& ckpt) { return to_json(ckpt).dump(); }

ClassifierCheckpoint load_classifier_checkpoint(std::string_view bytes) {
  return classifier_checkpoint_from_json(parse_json_document(bytes, "classifier checkpoint"));
}

}  // namespace traplab
