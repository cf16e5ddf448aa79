#include "vncseg/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "vncseg/loss.hpp"
#include "vncseg/metrics.hpp"
#include "vncseg/postprocess.hpp"

namespace vncseg {

namespace fs = std::filesystem;

namespace {

constexpr int kLogEvery = 50;
constexpr int kValEvery = 500;
constexpr std::uint64_t kInitTag = 0x1A17;
constexpr std::uint64_t kBatchTag = 0xBA7C;

double validation_dice(Network<float>& net, const Dataset& val, int slab_depth) {
  std::vector<Network<float>*> models = {&net};
  double sum = 0.0;
  for (const auto& c : val.cases) {
    LabelVolume pred = predict_labels(models, c.image, slab_depth);
    double case_sum = 0.0;
    for (int cls = 1; cls < kNumClasses; ++cls)
      case_sum += dice_coefficient(class_mask(pred, cls), class_mask(c.labels, cls));
    sum += case_sum / (kNumClasses - 1);
  }
  return sum / static_cast<double>(val.cases.size());
}

}  // namespace

TrainResult train_model(const Dataset& train_set, const Dataset& val_set,
                        const NetworkConfig& ncfg, const TrainConfig& cfg,
                        int slab_depth, const std::string& out_dir,
                        const std::string& resume_path) {
  ncfg.validate();
  cfg.validate();
  if (train_set.cases.empty()) throw std::runtime_error("training set is empty");
  if (slab_depth != ncfg.in_channels)
    throw std::runtime_error("slab depth " + std::to_string(slab_depth) +
                             " does not match network input channels " +
                             std::to_string(ncfg.in_channels));
  fs::create_directories(out_dir);

  std::unique_ptr<Network<float>> net;
  TrainState ts;
  int start_iter = 0;
  if (!resume_path.empty()) {
    net = load_checkpoint(resume_path, &ts);
    if (!ts.has_adam)
      throw std::runtime_error("checkpoint " + resume_path +
                               " has no optimizer state; cannot resume");
    const NetworkConfig& l = net->config();
    if (l.in_channels != ncfg.in_channels || l.n_classes != ncfg.n_classes ||
        l.base_channels != ncfg.base_channels || l.n_down != ncfg.n_down ||
        l.n_up != ncfg.n_up || l.n_res_blocks != ncfg.n_res_blocks)
      throw std::runtime_error("checkpoint architecture differs from requested config");
    start_iter = ts.iteration;
    if (start_iter >= cfg.iterations)
      throw std::runtime_error("checkpoint is already at iteration " +
                               std::to_string(start_iter));
  } else {
    net = std::make_unique<Network<float>>(ncfg);
    net->init_parameters(mix_seed(cfg.seed, kInitTag));
    ts.has_adam = true;
    ts.adam = AdamState<float>::like(net->parameters());
  }

  auto params = net->parameters();

  std::string log_path = out_dir + "/train_log.csv";
  std::ofstream log;
  if (start_iter > 0) {
    log.open(log_path, std::ios::binary | std::ios::app);
  } else {
    log.open(log_path, std::ios::binary | std::ios::trunc);
    log << "iteration,lr,loss,val_dice\n";
  }
  if (!log) throw std::runtime_error("cannot write " + log_path);

  TrainResult res;
  res.first_iteration = start_iter;
  res.best_val_dice = ts.best_val_dice;
  res.final_path = out_dir + "/final";
  res.best_path = out_dir + "/best";

  for (int t = start_iter; t < cfg.iterations; ++t) {
    double lr = learning_rate(t, cfg);
    Rng rng(mix_seed(cfg.seed, kBatchTag, static_cast<std::uint64_t>(t)));
    Batch batch = sample_batch(train_set, cfg.batch_size, slab_depth, rng);

    Tensor<float> logits = net->forward(batch.input, true);
    Tensor<float> probs = softmax_channels(logits);
    DiceLossResult<float> dice = soft_dice_loss(probs, batch.target, cfg.dice_eps);
    if (!std::isfinite(dice.loss))
      throw std::runtime_error("non-finite loss at iteration " + std::to_string(t + 1));

    Tensor<float> grad_logits = softmax_channels_backward(probs, dice.grad_probs);
    net->zero_grad();
    net->backward(grad_logits);
    adam_step(params, ts.adam, lr);

    res.losses.push_back(dice.loss);

    bool log_row = (t + 1) % kLogEvery == 0;
    char val_buf[32] = "";
    if ((t + 1) % kValEvery == 0 && !val_set.cases.empty()) {
      double vd = validation_dice(*net, val_set, slab_depth);
      std::snprintf(val_buf, sizeof(val_buf), "%.12g", vd);
      if (vd > res.best_val_dice) {
        res.best_val_dice = vd;
        res.best_iteration = t + 1;
        TrainState best_ts;
        best_ts.iteration = t + 1;
        best_ts.best_val_dice = vd;
        save_checkpoint(*net, res.best_path, &best_ts);
      }
    }
    if (log_row) {
      char row[128];
      std::snprintf(row, sizeof(row), "%d,%.12g,%.12g,%s\n", t + 1, lr, dice.loss,
                    val_buf);
      log << row;
    }
  }
  log.close();
  if (!log) throw std::runtime_error("cannot write " + log_path);

  ts.iteration = cfg.iterations;
  ts.best_val_dice = res.best_val_dice;
  save_checkpoint(*net, res.final_path, &ts);

  // Without a validation set the final weights double as the best ones.
  if (res.best_iteration < 0) {
    TrainState best_ts;
    best_ts.iteration = cfg.iterations;
    best_ts.best_val_dice = res.best_val_dice;
    save_checkpoint(*net, res.best_path, &best_ts);
  }
  net->drop_caches();
  return res;
}

std::vector<Volume> ensemble_predict(const std::vector<Network<float>*>& models,
                                     const Volume& image, int slab_depth) {
  if (models.empty()) throw std::runtime_error("no models given");
  const NetworkConfig& cfg = models[0]->config();
  for (Network<float>* m : models) {
    const NetworkConfig& c = m->config();
    if (c.in_channels != cfg.in_channels || c.n_classes != cfg.n_classes ||
        c.n_down != cfg.n_down)
      throw std::runtime_error("ensemble members have incompatible architectures");
  }
  if (slab_depth != cfg.in_channels)
    throw std::runtime_error("slab depth " + std::to_string(slab_depth) +
                             " does not match network input channels " +
                             std::to_string(cfg.in_channels));

  int nx = image.dims[0], ny = image.dims[1], nz = image.dims[2];
  int f = cfg.downsample_factor();
  int pw = (nx + f - 1) / f * f;
  int ph = (ny + f - 1) / f * f;

  std::vector<Volume> probs;
  for (int c = 0; c < cfg.n_classes; ++c)
    probs.push_back(make_volume(image.dims, image.spacing_mm, image.origin_mm,
                                Dtype::Float32));

  const int chunk = 8;
  std::vector<double> accum;
  for (int z0 = 0; z0 < nz; z0 += chunk) {
    int bs = std::min(chunk, nz - z0);
    Tensor<float> input({bs, slab_depth, ph, pw});
    for (int b = 0; b < bs; ++b) {
      Tensor<float> slab = extract_slab(image, z0 + b, slab_depth);
      for (int d = 0; d < slab_depth; ++d)
        for (int j = 0; j < ph; ++j) {
          int sj = std::min(j, ny - 1);
          for (int i = 0; i < pw; ++i)
            input(b, d, j, i) = slab(d, sj, std::min(i, nx - 1));
        }
    }

    accum.assign(static_cast<std::size_t>(bs) * cfg.n_classes * ph * pw, 0.0);
    for (Network<float>* m : models) {
      Tensor<float> p = softmax_channels(m->forward(input, false));
      for (std::size_t i = 0; i < p.data.size(); ++i)
        accum[i] += static_cast<double>(p.data[i]);
    }
    double inv = 1.0 / static_cast<double>(models.size());
    for (int b = 0; b < bs; ++b)
      for (int c = 0; c < cfg.n_classes; ++c)
        for (int j = 0; j < ny; ++j)
          for (int i = 0; i < nx; ++i) {
            std::size_t at =
                ((static_cast<std::size_t>(b) * cfg.n_classes + c) * ph + j) * pw + i;
            probs[c].at(i, j, z0 + b) = static_cast<float>(accum[at] * inv);
          }
  }
  return probs;
}

LabelVolume predict_labels(const std::vector<Network<float>*>& models,
                           const Volume& image, int slab_depth) {
  return argmax_labels(ensemble_predict(models, image, slab_depth));
}

std::vector<std::string> list_checkpoints(const std::string& dir) {
  std::vector<std::string> out;
  if (!fs::is_directory(dir))
    throw std::runtime_error("model directory " + dir + " does not exist");
  for (const auto& e : fs::directory_iterator(dir)) {
    std::string name = e.path().filename().string();
    const std::string suf = ".ckpt.json";
    if (name.size() > suf.size() &&
        name.compare(name.size() - suf.size(), suf.size(), suf) == 0)
      out.push_back(e.path().string());
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw std::runtime_error("no checkpoints found in " + dir);
  return out;
}

}  // namespace vncseg
