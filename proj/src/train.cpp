#include "nanonet/train.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <set>
#include <thread>

namespace nanonet {

void TrainConfig::validate() const {
  if (epochs < 0) throw ValueError("config: epochs must be >= 0");
  if (batch_size < 1) throw ValueError("config: batch_size must be >= 1");
  if (base_lr <= 0) throw ValueError("config: base_lr must be > 0");
  int prev = -1;
  for (const auto& s : lr_schedule) {
    if (s.epoch <= prev)
      throw ValueError("config: lr schedule epochs must be strictly increasing");
    if (s.epoch >= epochs)
      throw ValueError("config: lr schedule epoch " + std::to_string(s.epoch) +
                       " must be < epochs (" + std::to_string(epochs) + ")");
    prev = s.epoch;
  }
}

TrainConfig TrainConfig::with_epochs(int n) const {
  TrainConfig c = *this;
  c.epochs = n;
  std::erase_if(c.lr_schedule, [n](const LrStep& s) { return s.epoch >= n; });
  return c;
}

double lr_at(int epoch, const TrainConfig& cfg) {
  double mult = 1.0;
  for (const auto& s : cfg.lr_schedule) {
    if (epoch >= s.epoch) mult = s.multiplier;
  }
  return cfg.base_lr * mult;
}

ModelState ModelState::init(const ArchSpec& spec, uint64_t seed) {
  ModelState st;
  st.net = Network::build(spec, seed);
  for (const auto& [id, p] : st.net.params()) {
    LayerParams zero;
    zero.weights = Tensor::zeros_like(p.weights);
    zero.bias.assign(p.bias.size(), 0.0f);
    st.m.emplace(id, zero);
    st.v.emplace(id, std::move(zero));
  }
  return st;
}

ModelState ModelState::init_inherited(const ArchSpec& spec,
                                      const ModelState& parent, uint64_t seed) {
  ModelState st = init(spec, seed);
  for (auto& [id, p] : st.net.params()) {
    auto it = parent.net.params().find(id);
    if (it == parent.net.params().end()) continue;
    const LayerParams& pp = it->second;
    if (!pp.weights.same_shape(p.weights) || pp.bias.size() != p.bias.size())
      continue;
    p.weights.data = pp.weights.data;
    p.bias = pp.bias;
  }
  return st;
}

void adam_step(ModelState& state, const GradMap& grads, double lr,
               const TrainConfig& cfg) {
  state.step += 1;
  for (auto& [id, p] : state.net.params()) {
    auto git = grads.find(id);
    if (git == grads.end())
      throw ValueError("adam: missing gradient for node '" + id + "'");
    const LayerParams& g = git->second;
    if (!g.weights.same_shape(p.weights) || g.bias.size() != p.bias.size())
      throw ShapeError("adam: gradient shape mismatch at node '" + id + "'");
    for (float v : g.weights.data)
      if (!std::isfinite(v))
        throw ValueError("adam: non-finite gradient at node '" + id + "'");
    for (float v : g.bias)
      if (!std::isfinite(v))
        throw ValueError("adam: non-finite gradient at node '" + id + "'");
    LayerParams& m = state.m.at(id);
    LayerParams& v = state.v.at(id);
    adam_apply(p.weights.data.data(), m.weights.data.data(),
               v.weights.data.data(), g.weights.data.data(), p.weights.size(),
               lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, state.step);
    adam_apply(p.bias.data(), m.bias.data(), v.bias.data(), g.bias.data(),
               p.bias.size(), lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps,
               state.step);
  }
}

void assert_no_subject_leak(const std::vector<Sample>& train_set,
                            const std::vector<Sample>& test_set, int fold) {
  std::set<std::string> train_subjects;
  for (const auto& s : train_set) train_subjects.insert(s.subject_id);
  for (const auto& s : test_set)
    if (train_subjects.count(s.subject_id))
      throw ValueError("cross_validate: subject '" + s.subject_id +
                       "' leaks between train and test of fold " +
                       std::to_string(fold));
}

namespace {

Tensor stack_images(const std::vector<const Sample*>& batch) {
  const Tensor& first = batch[0]->image;
  Tensor out(static_cast<int>(batch.size()), first.c(), first.h(), first.w());
  const size_t stride = first.size();
  for (size_t i = 0; i < batch.size(); ++i)
    std::copy_n(batch[i]->image.data.data(), stride,
                out.data.data() + i * stride);
  return out;
}

int argmax_row(const Tensor& probs, int row) {
  int best = 0;
  for (int k = 1; k < probs.c(); ++k)
    if (probs.at(row, k, 0, 0) > probs.at(row, best, 0, 0)) best = k;
  return best;
}

// Post-mortem for a non-finite loss: name the first node that went bad.
std::string first_nonfinite_node(const Network& net, const ActivationMap& acts) {
  for (const auto& id : net.order()) {
    auto it = acts.find(id);
    if (it != acts.end() && !it->second.all_finite()) return id;
  }
  return "(loss only)";
}

}  // namespace

TrainResult train(const ArchSpec& spec, const std::vector<Sample>& train_set,
                  const std::vector<Sample>& val_set, const TrainConfig& cfg,
                  const ModelState* warm_start) {
  cfg.validate();
  if (train_set.empty()) throw ValueError("train: empty training set");

  const uint64_t init_seed = derive_seed(cfg.seed, {0x1417});
  TrainResult result{warm_start
                         ? ModelState::init_inherited(spec, *warm_start, init_seed)
                         : ModelState::init(spec, init_seed),
                     {}};
  if (result.state.net.num_classes() != kNumClasses)
    throw ValueError("train: network has " +
                     std::to_string(result.state.net.num_classes()) +
                     " output classes, expected " + std::to_string(kNumClasses));

  std::vector<size_t> order(train_set.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  // inverse-frequency weights, mean 1 over represented classes
  std::vector<double> class_weights;
  if (cfg.class_weighting) {
    std::array<long long, kNumClasses> counts{};
    for (const auto& s : train_set) counts[s.label]++;
    int present = 0;
    for (long long c : counts)
      if (c > 0) ++present;
    class_weights.resize(kNumClasses, 0.0);
    for (int c = 0; c < kNumClasses; ++c)
      if (counts[c] > 0)
        class_weights[c] = static_cast<double>(train_set.size()) /
                           (static_cast<double>(present) * counts[c]);
  }
  const std::vector<double>* weights_ptr =
      cfg.class_weighting ? &class_weights : nullptr;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(cfg.seed, {0x500f, static_cast<uint64_t>(epoch)}));
    shuffle_rng.shuffle(order);
    const double lr = lr_at(epoch, cfg);

    double loss_sum = 0;
    long long correct = 0;
    for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<Sample> augmented;
      std::vector<const Sample*> batch;
      std::vector<int> labels;
      augmented.reserve(end - start);
      for (size_t i = start; i < end; ++i) {
        const Sample& s = train_set[order[i]];
        if (cfg.augment_enabled) {
          Rng arng(derive_seed(cfg.seed, {0xa46, static_cast<uint64_t>(epoch),
                                          static_cast<uint64_t>(order[i])}));
          augmented.push_back(augment(s, arng, cfg.augment));
        } else {
          augmented.push_back(s);
        }
        labels.push_back(s.label);
      }
      for (const auto& s : augmented) batch.push_back(&s);

      const Tensor input = stack_images(batch);
      ActivationMap acts = result.state.net.forward_all(input);
      const Tensor& logits = acts.at(result.state.net.logits_node());
      auto xent = softmax_xent(logits, labels, weights_ptr);
      if (!std::isfinite(xent.loss))
        throw ValueError("train: non-finite loss at epoch " +
                         std::to_string(epoch) + ", batch " +
                         std::to_string(start / cfg.batch_size) + ", node '" +
                         first_nonfinite_node(result.state.net, acts) + "'");
      loss_sum += xent.loss * static_cast<double>(labels.size());
      for (size_t i = 0; i < labels.size(); ++i)
        if (argmax_row(xent.probs, static_cast<int>(i)) == labels[i]) ++correct;

      GradMap grads = result.state.net.backward(acts, input, xent.grad_logits);
      adam_step(result.state, grads, lr, cfg);
    }

    EpochStats es;
    es.epoch = epoch;
    es.lr = lr;
    es.train_loss = loss_sum / static_cast<double>(train_set.size());
    es.train_acc = static_cast<double>(correct) / static_cast<double>(train_set.size());
    if (!val_set.empty())
      es.val_acc = evaluate(result.state.net, val_set).accuracy;
    result.history.push_back(es);
    if (cfg.verbose)
      std::cerr << "epoch " << epoch << " lr " << lr << " loss " << es.train_loss
                << " acc " << es.train_acc
                << (val_set.empty() ? "" : " val " + std::to_string(es.val_acc))
                << "\n";
  }
  return result;
}

EvalResult evaluate(const Network& net, const std::vector<Sample>& data) {
  if (data.empty()) throw ValueError("evaluate: empty dataset");
  EvalResult r;
  long long correct = 0;
  constexpr size_t kEvalBatch = 64;
  for (size_t start = 0; start < data.size(); start += kEvalBatch) {
    const size_t end = std::min(data.size(), start + kEvalBatch);
    std::vector<const Sample*> batch;
    for (size_t i = start; i < end; ++i) batch.push_back(&data[i]);
    const Tensor probs = net.probs(stack_images(batch));
    for (size_t i = start; i < end; ++i) {
      const int pred = argmax_row(probs, static_cast<int>(i - start));
      const int truth = data[i].label;
      r.confusion[truth][pred] += 1;
      if (pred == truth) ++correct;
    }
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  return r;
}

CrossValResult cross_validate(const ArchSpec& spec,
                              const std::vector<Sample>& samples, int k,
                              const TrainConfig& cfg,
                              std::optional<FoldPlan> plan_opt) {
  if (k < 2) throw ValueError("cross_validate: k must be >= 2");
  const FoldPlan plan =
      plan_opt ? *plan_opt : make_folds(samples, k, cfg.seed);
  if (plan.k != k)
    throw ValueError("cross_validate: plan has k=" + std::to_string(plan.k) +
                     ", requested " + std::to_string(k));
  for (const auto& s : samples)
    if (!plan.assignments.count(s.subject_id))
      throw ValueError("cross_validate: subject '" + s.subject_id +
                       "' missing from fold plan");

  CrossValResult result;
  result.folds.resize(k);

  auto run_fold = [&](int f) {
    std::vector<Sample> train_set, test_set;
    std::set<std::string> test_subjects;
    for (const auto& s : samples) {
      if (plan.assignments.at(s.subject_id) == f) {
        test_set.push_back(s);
        test_subjects.insert(s.subject_id);
      } else {
        train_set.push_back(s);
      }
    }
    assert_no_subject_leak(train_set, test_set, f);
    if (test_set.empty())
      throw ValueError("cross_validate: fold " + std::to_string(f) +
                       " has no test samples");

    TrainConfig fold_cfg = cfg;
    fold_cfg.seed = derive_seed(cfg.seed, {0xf01d, static_cast<uint64_t>(f)});
    fold_cfg.verbose = false;
    TrainResult tr = train(spec, train_set, {}, fold_cfg);

    FoldResult fr;
    fr.fold = f;
    fr.test_count = static_cast<int>(test_set.size());
    fr.accuracy = evaluate(tr.state.net, test_set).accuracy;
    fr.test_subjects.assign(test_subjects.begin(), test_subjects.end());
    result.folds[f] = std::move(fr);
    if (cfg.verbose)
      std::cerr << "fold " << f << ": acc " << result.folds[f].accuracy << " ("
                << result.folds[f].test_count << " test samples)\n";
  };

  const int threads = std::max(1, cfg.threads);
  if (threads == 1) {
    for (int f = 0; f < k; ++f) run_fold(f);
  } else {
    // Folds are independent jobs with derived seeds; results do not depend
    // on scheduling.
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    for (int t = 0; t < std::min(threads, k); ++t)
      pool.emplace_back([&, t] {
        try {
          for (int f = next.fetch_add(1); f < k; f = next.fetch_add(1))
            run_fold(f);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  double sum = 0;
  for (const auto& f : result.folds) sum += f.accuracy;
  result.mean_accuracy = sum / k;
  return result;
}

namespace {

constexpr uint32_t kCheckpointMagic = 0x4e4e4331;  // "NNC1"

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

template <typename T>
void read_pod(std::ifstream& in, T& v) {
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelState& state) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValueError("checkpoint: cannot open '" + path + "' for write");
  write_pod(out, kCheckpointMagic);
  write_pod(out, content_hash_u64(state.net.spec()));
  write_pod(out, static_cast<uint64_t>(state.net.param_scalar_count()));
  write_pod(out, static_cast<uint64_t>(state.step));
  for (const auto& id : state.net.order()) {
    auto it = state.net.params().find(id);
    if (it == state.net.params().end()) continue;
    const LayerParams& p = it->second;
    out.write(reinterpret_cast<const char*>(p.weights.data.data()),
              static_cast<std::streamsize>(p.weights.size() * 4));
    out.write(reinterpret_cast<const char*>(p.bias.data()),
              static_cast<std::streamsize>(p.bias.size() * 4));
  }
  if (!out) throw ValueError("checkpoint: write to '" + path + "' failed");
}

ModelState load_checkpoint(const std::string& path, const ArchSpec& spec) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValueError("checkpoint: cannot open '" + path + "'");
  uint32_t magic = 0;
  uint64_t hash = 0, count = 0, step = 0;
  read_pod(in, magic);
  if (!in || magic != kCheckpointMagic)
    throw ValueError("checkpoint: '" + path + "' has wrong magic/version");
  read_pod(in, hash);
  read_pod(in, count);
  read_pod(in, step);
  if (hash != content_hash_u64(spec))
    throw ValueError("checkpoint: spec hash mismatch for '" + path +
                     "'; refusing to load");

  ModelState st = ModelState::init(spec, 0);
  if (count != st.net.param_scalar_count())
    throw ValueError("checkpoint: scalar count mismatch");
  st.step = static_cast<long long>(step);
  for (const auto& id : st.net.order()) {
    auto it = st.net.params().find(id);
    if (it == st.net.params().end()) continue;
    LayerParams& p = it->second;
    in.read(reinterpret_cast<char*>(p.weights.data.data()),
            static_cast<std::streamsize>(p.weights.size() * 4));
    in.read(reinterpret_cast<char*>(p.bias.data()),
            static_cast<std::streamsize>(p.bias.size() * 4));
  }
  if (!in) throw ValueError("checkpoint: truncated file '" + path + "'");
  return st;
}

}  // namespace nanonet
