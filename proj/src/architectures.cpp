#include "cumulus/architectures.hpp"

#include "cumulus/errors.hpp"

namespace cumulus {

namespace {

constexpr double kLambda = 1e-5;

struct Builder {
  Graph g;
  std::string last = "input";

  void input(Shape shape) {
    g.input_shape = std::move(shape);
    g.add({"input", NodeKind::Input, std::monostate{}, {}});
  }
  std::string conv(const std::string& id, int64_t filters, int kh, int kw,
                   Padding pad, double l2, const std::string& from = "") {
    g.add({id, NodeKind::Conv2D, Conv2DParams{filters, kh, kw, 1, pad, l2},
           {from.empty() ? last : from}});
    last = id;
    return id;
  }
  std::string relu(const std::string& id) {
    g.add({id, NodeKind::Activation, ActivationParams{ActKind::Relu}, {last}});
    last = id;
    return id;
  }
  std::string sigmoid(const std::string& id) {
    g.add({id, NodeKind::Activation, ActivationParams{ActKind::Sigmoid}, {last}});
    last = id;
    return id;
  }
  std::string pool(const std::string& id, int ph, int pw, int sh, int sw) {
    g.add({id, NodeKind::MaxPool2D, MaxPool2DParams{ph, pw, sh, sw, Padding::Valid},
           {last}});
    last = id;
    return id;
  }
  std::string dense(const std::string& id, int64_t units, double l2) {
    g.add({id, NodeKind::Dense, DenseParams{units, l2}, {last}});
    last = id;
    return id;
  }
  std::string dropout(const std::string& id, double rate) {
    g.add({id, NodeKind::Dropout, DropoutParams{rate}, {last}});
    last = id;
    return id;
  }
  std::string flatten(const std::string& id) {
    g.add({id, NodeKind::Flatten, std::monostate{}, {last}});
    last = id;
    return id;
  }
  std::string tconv(const std::string& id, int64_t filters, int k, int stride,
                    double l2) {
    g.add({id, NodeKind::TransposedConv2D,
           TransposedConv2DParams{filters, k, k, stride, l2}, {last}});
    last = id;
    return id;
  }
  std::string concat(const std::string& id, const std::string& a, const std::string& b) {
    g.add({id, NodeKind::Concat, std::monostate{}, {a, b}});
    last = id;
    return id;
  }
};

// Pixel-Net and Patch-Net share the layer stack; the spectral axis runs along
// H so 1D convs/pools become 3x1 and 2x1 operators.
Graph build_pixelwise(const std::string& name, Shape input, double dropout_rate) {
  Builder b;
  b.g.arch_name = name;
  b.input(std::move(input));
  b.conv("conv1", 128, 3, 1, Padding::Same, kLambda);
  b.relu("conv1_relu");
  b.pool("pool1", 2, 1, 1, 1);
  b.conv("conv2", 64, 3, 1, Padding::Same, kLambda);
  b.relu("conv2_relu");
  b.pool("pool2", 2, 1, 1, 1);
  b.flatten("flatten");
  b.dense("dense1", 64, kLambda);
  b.relu("dense1_relu");
  b.dropout("drop1", dropout_rate);
  b.dense("dense2", 32, kLambda);
  b.relu("dense2_relu");
  b.dense("output", 1, kLambda);
  b.sigmoid("output_sigmoid");
  return b.g;
}

Graph build_scene_net(int input_hw) {
  Builder b;
  b.g.arch_name = "scene_net";
  b.input({1, input_hw, input_hw, 12});
  const int64_t filters[5] = {16, 32, 64, 128, 256};
  for (int i = 0; i < 5; ++i) {
    std::string n = std::to_string(i + 1);
    b.conv("conv" + n, filters[i], 3, 3, Padding::Same, 0.0);
    b.relu("conv" + n + "_relu");
    b.pool("pool" + n, 3, 3, 2, 2);
  }
  b.flatten("flatten");
  b.dense("dense1", 1024, 0.0);
  b.relu("dense1_relu");
  b.dropout("drop1", 0.5);
  b.dense("dense2", 512, 0.0);
  b.relu("dense2_relu");
  b.dropout("drop2", 0.5);
  b.dense("dense3", 256, 0.0);
  b.relu("dense3_relu");
  b.dense("output", 1, 0.0);
  b.sigmoid("output_sigmoid");
  return b.g;
}

Graph build_u_net(int input_hw) {
  Builder b;
  b.g.arch_name = "u_net";
  b.input({1, input_hw, input_hw, 12});
  const int64_t filters[4] = {16, 32, 64, 128};
  std::string skips[4];
  for (int i = 0; i < 4; ++i) {
    std::string p = "enc" + std::to_string(i + 1);
    b.conv(p + "_conv1", filters[i], 3, 3, Padding::Same, kLambda);
    b.relu(p + "_relu1");
    b.conv(p + "_conv2", filters[i], 3, 3, Padding::Same, kLambda);
    b.relu(p + "_relu2");
    if (i >= 2) b.dropout(p + "_drop", 0.5);  // last two encoder blocks
    skips[i] = b.last;
    b.pool(p + "_pool", 2, 2, 2, 2);
  }
  b.conv("bot_conv1", 256, 3, 3, Padding::Same, kLambda);
  b.relu("bot_relu1");
  b.conv("bot_conv2", 256, 3, 3, Padding::Same, kLambda);
  b.relu("bot_relu2");
  b.dropout("bot_drop", 0.5);
  for (int i = 0; i < 4; ++i) {
    std::string p = "dec" + std::to_string(i + 1);
    int64_t f = filters[3 - i];
    std::string up = b.tconv(p + "_up", f, 2, 2, kLambda);
    b.concat(p + "_cat", up, skips[3 - i]);
    b.conv(p + "_conv1", f, 3, 3, Padding::Same, kLambda);
    b.relu(p + "_relu1");
    b.conv(p + "_conv2", f, 3, 3, Padding::Same, kLambda);
    b.relu(p + "_relu2");
  }
  b.conv("out_conv", 1, 1, 1, Padding::Same, kLambda);
  b.sigmoid("out_sigmoid");
  return b.g;
}

}  // namespace

const std::vector<std::string>& architecture_names() {
  static const std::vector<std::string> names = {"pixel_net", "patch_net", "scene_net",
                                                 "u_net"};
  return names;
}

Graph build_architecture(const std::string& arch, int input_hw) {
  Graph g;
  if (arch == "pixel_net") {
    g = build_pixelwise("pixel_net", {1, 12, 1, 1}, 0.2);
  } else if (arch == "patch_net") {
    g = build_pixelwise("patch_net", {1, 5, 5, 12}, 0.5);
  } else if (arch == "scene_net") {
    g = build_scene_net(input_hw > 0 ? input_hw : 256);
  } else if (arch == "u_net") {
    g = build_u_net(input_hw > 0 ? input_hw : 256);
  } else {
    throw ArchError("unknown architecture " + arch);
  }
  g.validate();
  return g;
}

Graph build_architecture(const std::string& arch) { return build_architecture(arch, 0); }

}  // namespace cumulus
