#include "raki/network.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <mutex>
#include <numeric>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "raki/conv.hpp"
#include "raki/sim.hpp"

namespace raki {

void NetworkConfig::validate() const {
  auto fail = [](std::string const &what) { throw ConfigError("invalid network config: " + what); };
  if (num_layers < 1) fail("num_layers must be >= 1");
  if (filter_size < 1 || filter_size % 2 == 0) fail("filter_size must be odd and >= 1");
  if (num_filters < 1) fail("num_filters must be >= 1");
  if (has_penultimate() && penultimate_filters < 1) fail("penultimate_filters must be >= 1");
  if (in_channels < 1) fail("in_channels must be >= 1");
  if (out_channels < 1) fail("out_channels must be >= 1");
  if (dropout && !(dropout_rate >= 0.0 && dropout_rate < 1.0)) fail("dropout_rate must be in [0, 1)");
}

std::vector<LayerShape> layer_shapes(NetworkConfig const &c) {
  c.validate();
  if (c.num_layers == 1) return {{c.in_channels, c.out_channels, c.filter_size}};
  std::vector<LayerShape> shapes;
  int in = c.in_channels;
  for (int l = 0; l < c.num_layers - 2; ++l) {
    shapes.push_back({in, c.num_filters, c.filter_size});
    in = c.num_filters;
  }
  shapes.push_back({in, c.penultimate_filters, 1});
  shapes.push_back({c.penultimate_filters, c.out_channels, c.filter_size});
  return shapes;
}

Eigen::Index parameter_count(NetworkConfig const &config) {
  Eigen::Index n = 0;
  for (auto const &s : layer_shapes(config)) n += Eigen::Index{s.in_channels} * s.out_channels * s.kernel * s.kernel;
  return n;
}

Eigen::Index RakiNetwork::conv_parameter_count() const {
  Eigen::Index n = 0;
  for (auto const &l : layers) n += l.conv.size();
  return n;
}

RakiNetwork build_network(NetworkConfig const &config, Rng &rng) {
  RakiNetwork net;
  net.config = config;
  auto const shapes = layer_shapes(config);
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    auto const &s = shapes[i];
    bool const last = i + 1 == shapes.size();
    Layer layer;
    layer.conv = ConvWeightsd(s.out_channels, s.in_channels, s.kernel);
    double const bound = std::sqrt(1.0 / (static_cast<double>(s.in_channels) * s.kernel * s.kernel));
    double *w = layer.conv.data();
    for (Eigen::Index j = 0; j < layer.conv.size(); ++j) w[j] = rng.uniform(-bound, bound);
    if (!last) {
      layer.relu = true;
      layer.dropout = config.dropout;
      if (config.batch_norm) layer.batch_norm.emplace(s.out_channels);
    }
    net.layers.push_back(std::move(layer));
  }
  return net;
}

std::vector<Tensor3d> forward(RakiNetwork &net, std::vector<Tensor3d> const &batch, Mode mode, Rng &rng,
                              ForwardCache *cache) {
  if (batch.empty()) throw EmptyBatchError("forward: empty batch");
  if (cache) {
    cache->clear();
    cache->resize(net.layers.size());
  }
  std::vector<Tensor3d> current = batch;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    auto &layer = net.layers[l];
    LayerCache *lc = cache ? &(*cache)[l] : nullptr;
    std::vector<Tensor3d> z;
    z.reserve(current.size());
    for (auto const &x : current) z.push_back(conv2d_forward(x, layer.conv));
    if (lc) lc->input = std::move(current);

    if (layer.batch_norm) z = batchnorm_forward(z, *layer.batch_norm, mode, lc ? &lc->batch_norm : nullptr);
    if (layer.relu) {
      std::vector<Tensor3d> a;
      a.reserve(z.size());
      for (auto const &t : z) a.push_back(relu_forward(t));
      if (lc) lc->pre_activation = std::move(z);
      z = std::move(a);
    }
    if (layer.dropout && mode == Mode::Train) {
      for (auto &t : z) {
        auto r = dropout_forward(t, net.config.dropout_rate, rng, mode);
        t = std::move(r.output);
        if (lc) lc->dropout_mask.push_back(std::move(r.mask));
      }
    }
    current = std::move(z);
  }
  return current;
}

Tensor3d infer(RakiNetwork const &net, Tensor3d const &input) {
  Tensor3d x = input;
  for (auto const &layer : net.layers) {
    x = conv2d_forward(x, layer.conv);
    if (layer.batch_norm) x = batchnorm_infer(std::vector<Tensor3d>{std::move(x)}, *layer.batch_norm).front();
    if (layer.relu) x = relu_forward(x);
  }
  return x;
}

NetworkGrads backward(RakiNetwork const &net, ForwardCache const &cache, std::vector<Tensor3d> const &grad_out) {
  if (cache.size() != net.layers.size()) throw ShapeError("backward: cache does not match network depth");
  NetworkGrads g;
  g.conv.resize(net.layers.size());
  g.gamma.resize(net.layers.size());
  g.beta.resize(net.layers.size());

  std::vector<Tensor3d> grad = grad_out;
  for (std::size_t l = net.layers.size(); l-- > 0;) {
    auto const &layer = net.layers[l];
    auto const &lc = cache[l];
    if (layer.dropout && !lc.dropout_mask.empty()) {
      for (std::size_t b = 0; b < grad.size(); ++b) grad[b] = dropout_backward(grad[b], lc.dropout_mask[b]);
    }
    if (layer.relu) {
      for (std::size_t b = 0; b < grad.size(); ++b) grad[b] = relu_backward(lc.pre_activation[b], grad[b]);
    }
    if (layer.batch_norm) {
      auto bg = batchnorm_backward(grad, *layer.batch_norm, lc.batch_norm);
      grad = std::move(bg.input);
      g.gamma[l] = std::move(bg.gamma);
      g.beta[l] = std::move(bg.beta);
    }
    ConvWeightsd gw(layer.conv.out_channels(), layer.conv.in_channels(), layer.conv.kernel());
    std::vector<Tensor3d> next;
    for (std::size_t b = 0; b < grad.size(); ++b) {
      if (l == 0) {
        gw.matrix() += conv2d_weight_grad(lc.input[b], layer.conv, grad[b]).matrix();
      } else {
        auto cg = conv2d_backward(lc.input[b], layer.conv, grad[b]);
        gw.matrix() += cg.weights.matrix();
        next.push_back(std::move(cg.input));
      }
    }
    g.conv[l] = std::move(gw);
    grad = std::move(next);
  }
  return g;
}

std::vector<ParamView> param_views(RakiNetwork &net, NetworkGrads const &grads) {
  std::vector<ParamView> views;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    auto &layer = net.layers[l];
    views.push_back({layer.conv.data(), grads.conv[l].data(), layer.conv.size()});
    if (layer.batch_norm) {
      views.push_back({layer.batch_norm->gamma.data(), grads.gamma[l].data(), layer.batch_norm->gamma.size()});
      views.push_back({layer.batch_norm->beta.data(), grads.beta[l].data(), layer.batch_norm->beta.size()});
    }
  }
  return views;
}

namespace {

// Training allocates and frees megabyte-sized tensors every step. glibc would
// serve those with fresh mmaps and page-fault on every touch, which costs
// more than the arithmetic; keep them on the heap instead.
void keep_large_blocks_on_heap() {
#if defined(__GLIBC__)
  static std::once_flag once;
  std::call_once(once, [] {
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 512 << 20);
    mallopt(M_TOP_PAD, 64 << 20);
  });
#endif
}

} // namespace

TrainRecord train(RakiNetwork &net, TrainingSet const &set, TrainBudget const &budget, TrainOptions const &options,
                  Rng &rng) {
  if (set.samples.empty()) throw DataError("train: training set is empty");
  if (budget.max_epochs < 0 || budget.max_seconds < 0.0) throw ParameterError("train: negative budget");
  if (budget.max_epochs == 0 && budget.max_seconds == 0.0) {
    throw ParameterError("train: budget needs max_epochs >= 1 or max_seconds > 0");
  }
  if (options.batch_size < 1) throw ParameterError("train: batch size must be >= 1");
  if (set.samples.front().input.channels() != net.config.in_channels) {
    throw ShapeError("train: sample channels do not match the network input");
  }

  keep_large_blocks_on_heap();
  net.scale = set.scale;
  AdamState adam{options.adam, 0, {}, {}};
  TrainRecord record;
  auto const n = set.samples.size();
  auto const batch_size = std::min<std::size_t>(static_cast<std::size_t>(options.batch_size), n);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  auto const start = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };

  while (true) {
    // Fisher-Yates with the trainer's generator.
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    double epoch_loss = 0.0;
    for (std::size_t begin = 0; begin < n; begin += batch_size) {
      auto const end = std::min(n, begin + batch_size);
      std::vector<Tensor3d> inputs;
      for (std::size_t i = begin; i < end; ++i) inputs.push_back(set.samples[order[i]].input);
      ForwardCache cache;
      auto const out = forward(net, inputs, Mode::Train, rng, &cache);

      auto const count = static_cast<double>(end - begin);
      std::vector<Tensor3d> grads;
      for (std::size_t i = begin; i < end; ++i) {
        auto loss = l1_loss(out[i - begin], set.samples[order[i]].target);
        epoch_loss += loss.loss;
        loss.grad.matrix() /= count;
        grads.push_back(std::move(loss.grad));
      }
      auto const g = backward(net, cache, grads);
      auto const views = param_views(net, g);
      adam_step(views, adam);
    }
    epoch_loss /= static_cast<double>(n);
    record.history.push_back(epoch_loss);
    ++record.epochs;
    record.final_loss = epoch_loss;
    if (!std::isfinite(epoch_loss)) {
      record.finite = false;
      break;
    }
    if (budget.max_epochs > 0 && record.epochs >= budget.max_epochs) break;
    if (budget.max_seconds > 0.0 && elapsed() >= budget.max_seconds) break;
  }
  record.wall_seconds = elapsed();
  return record;
}

double evaluate_loss(RakiNetwork const &net, TrainingSet const &set) {
  if (set.samples.empty()) throw DataError("evaluate_loss: training set is empty");
  double total = 0.0;
  for (auto const &s : set.samples) total += l1_loss(infer(net, s.input), s.target).loss;
  return total / static_cast<double>(set.samples.size());
}

void RakiBank::insert(int slice, int coil, RakiNetwork net) {
  if (slice < 0 || slice >= sms_ || coil < 0 || coil >= coils_) {
    throw IndexError("RakiBank: (slice " + std::to_string(slice) + ", coil " + std::to_string(coil) +
                     ") outside the packet");
  }
  nets_.insert_or_assign({slice, coil}, std::move(net));
}

RakiNetwork const &RakiBank::at(int slice, int coil) const {
  auto it = nets_.find({slice, coil});
  if (it == nets_.end()) {
    throw CoverageError("no trained network for slice " + std::to_string(slice) + ", coil " + std::to_string(coil));
  }
  return it->second;
}

std::vector<MultiCoil> unalias_shifted(RakiBank const &bank, MultiCoil const &aliased_frame) {
  if (static_cast<int>(aliased_frame.size()) != bank.coils()) {
    throw ShapeError("unalias: frame coil count does not match the network bank");
  }
  // Check coverage before doing any work.
  for (int s = 0; s < bank.sms(); ++s) {
    for (int c = 0; c < bank.coils(); ++c) (void)bank.at(s, c);
  }
  std::vector<MultiCoil> out(static_cast<std::size_t>(bank.sms()));
  std::map<double, Tensor3d> inputs;
  for (int s = 0; s < bank.sms(); ++s) {
    for (int c = 0; c < bank.coils(); ++c) {
      auto const &net = bank.at(s, c);
      auto it = inputs.find(net.scale);
      if (it == inputs.end()) it = inputs.emplace(net.scale, to_channels(aliased_frame, net.scale)).first;
      auto const y = infer(net, it->second);
      out[static_cast<std::size_t>(s)].push_back(from_channels(y, 1.0 / net.scale).front());
    }
  }
  return out;
}

std::vector<MultiCoil> unalias(RakiBank const &bank, MultiCoil const &aliased_frame) {
  auto out = unalias_shifted(bank, aliased_frame);
  for (int s = 0; s < bank.sms(); ++s) {
    auto &slice = out[static_cast<std::size_t>(s)];
    slice = undo_caipi_shift(slice, s, bank.fov_shift());
  }
  return out;
}

} // namespace raki
