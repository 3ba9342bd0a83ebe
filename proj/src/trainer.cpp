#include "l3doc/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <thread>

#include "l3doc/errors.hpp"
#include "l3doc/ops.hpp"

namespace l3doc::train {

std::string to_string(Mode mode) {
    switch (mode) {
        case Mode::L3doc: return "l3doc";
        case Mode::Stl: return "stl";
        case Mode::Finetune: return "finetune";
    }
    return "?";
}

Mode parse_mode(const std::string& name) {
    if (name == "l3doc") return Mode::L3doc;
    if (name == "stl") return Mode::Stl;
    if (name == "finetune") return Mode::Finetune;
    throw ConfigError("unknown mode '" + name + "' (expected l3doc, stl or finetune)");
}

void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, OptimizerState& state,
               const OptimizerConfig& config) {
    if (params.size() != grads.size()) throw DimensionError("adam_step: parameter and gradient counts differ");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i]->shape() != grads[i].shape()) {
            throw DimensionError("adam_step: gradient " + shape_to_string(grads[i].shape()) + " for parameter " +
                                 shape_to_string(params[i]->shape()));
        }
    }
    const double lr = config.learning_rate;
    if (config.kind == OptimizerKind::Sgd) {
        ++state.step;
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto p = params[i]->data();
            for (std::size_t j = 0; j < p.size(); ++j) p[j] -= lr * grads[i][j];
        }
        return;
    }
    if (state.first_moment.empty()) {
        for (const Tensor* p : params) {
            state.first_moment.emplace_back(p->shape());
            state.second_moment.emplace_back(p->shape());
        }
    }
    if (state.first_moment.size() != params.size()) throw DimensionError("adam_step: optimizer state size mismatch");
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double bias1 = 1.0 - std::pow(config.beta1, t);
    const double bias2 = 1.0 - std::pow(config.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto p = params[i]->data();
        auto m = state.first_moment[i].data();
        auto v = state.second_moment[i].data();
        if (m.size() != p.size()) throw DimensionError("adam_step: moment shape mismatch");
        const auto g = grads[i].data();
        for (std::size_t j = 0; j < p.size(); ++j) {
            m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * g[j];
            v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * g[j] * g[j];
            const double m_hat = m[j] / bias1;
            const double v_hat = v[j] / bias2;
            p[j] -= lr * m_hat / (std::sqrt(v_hat) + config.epsilon);
        }
    }
}

void ExperimentConfig::validate() const {
    backbone.validate();
    if (backbone.widths != spec.widths()) throw ConfigError("factor spec widths differ from backbone widths");
    mam.validate();
    if (epochs == 0) throw ConfigError("epochs must be >= 1");
    if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
    if (!(optimizer.learning_rate >= 0.0)) throw ConfigError("learning_rate must be >= 0");
    if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0) || !(optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0)) {
        throw ConfigError("adam betas must lie in [0, 1)");
    }
    if (!(optimizer.epsilon > 0.0)) throw ConfigError("adam epsilon must be > 0");
    if (init_stddev && !(*init_stddev > 0.0)) throw ConfigError("init_stddev must be > 0");
    if (eval_threads == 0) throw ConfigError("eval_threads must be >= 1");
}

void TaskArchive::append(factor::TaskFactors factors, ArchiveEntry entry) {
    factors_.push_back(std::move(factors));
    entries_.push_back(std::move(entry));
}

std::span<const factor::TaskFactors> TaskArchive::regularizer_view() const {
    ++regularizer_reads_;
    return factors_;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t purpose, std::uint64_t index) {
    // splitmix64 finalizer over a mixed key
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (purpose * 0x100000001B3ULL + index + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

namespace {

enum SeedPurpose : std::uint64_t { kKnowledgeSeed = 1, kFactorSeed = 2, kShuffleSeed = 3 };

constexpr std::size_t kEvalChunk = 64;

}  // namespace

double evaluate_task(const factor::KnowledgeBase& kb, const factor::TaskFactors& factors,
                     const data::TaskDataset& dataset) {
    const auto kernels = factor::reconstruct_all(kb, factors);
    std::size_t hits = 0;
    const auto& test = dataset.test;
    for (std::size_t start = 0; start < test.size(); start += kEvalChunk) {
        const std::size_t end = std::min(test.size(), start + kEvalChunk);
        std::vector<const Tensor*> clouds;
        std::vector<std::size_t> labels;
        for (std::size_t i = start; i < end; ++i) {
            clouds.push_back(&test[i].cloud.points);
            labels.push_back(test[i].label);
        }
        const Tensor logits = backbone::forward_values(backbone::make_batch(clouds), kernels, factors.biases, factors.head);
        const auto predicted = ops::argmax_rows(logits);
        for (std::size_t i = 0; i < labels.size(); ++i) hits += predicted[i] == labels[i];
    }
    return static_cast<double>(hits) / static_cast<double>(test.size());
}

std::vector<double> evaluate_archive(const factor::KnowledgeBase& kb, const TaskArchive& archive, std::size_t threads) {
    std::vector<double> acc(archive.size(), 0.0);
    auto eval_one = [&](std::size_t i) {
        const auto& entry = archive.entry(i);
        const auto& knowledge = entry.own_knowledge ? *entry.own_knowledge : kb;
        acc[i] = evaluate_task(knowledge, archive.factors(i), *entry.dataset);
    };
    threads = std::max<std::size_t>(1, std::min(threads, archive.size()));
    if (threads == 1) {
        for (std::size_t i = 0; i < archive.size(); ++i) eval_one(i);
        return acc;
    }
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < threads; ++w) {
        pool.emplace_back([&, w] {
            for (std::size_t i = w; i < archive.size(); i += threads) eval_one(i);
        });
    }
    for (auto& t : pool) t.join();
    return acc;
}

TaskResult train_task(std::size_t task_index, const data::TaskDataset& dataset, factor::KnowledgeBase& kb,
                      factor::TaskFactors factors, const TaskArchive& archive, const ExperimentConfig& config,
                      const EpochCallback& on_epoch) {
    dataset.validate();
    const std::size_t layers = config.spec.num_layers();
    if (dataset.train.front().cloud.dim() != config.backbone.point_dim()) {
        throw DataError("task " + std::to_string(task_index + 1) + " points have dimension " +
                        std::to_string(dataset.train.front().cloud.dim()) + ", backbone expects " +
                        std::to_string(config.backbone.point_dim()));
    }
    if (kb.num_layers() != layers || factors.deconv_kernels.size() != layers) {
        throw DimensionError("train_task: knowledge base or factors do not match the factor spec");
    }
    if (factors.head.num_classes() != dataset.num_classes()) {
        throw DimensionError("train_task: head has " + std::to_string(factors.head.num_classes()) +
                             " classes, task has " + std::to_string(dataset.num_classes()));
    }

    const bool regularize = config.mode == Mode::L3doc;
    const std::size_t n_train = dataset.train.size();
    const std::size_t batches = (n_train + config.batch_size - 1) / config.batch_size;
    std::mt19937_64 shuffle_rng(derive_seed(config.seed, kShuffleSeed, task_index));
    std::vector<std::size_t> order(n_train);

    OptimizerState opt_state;
    TaskResult result;
    result.log.task = task_index + 1;

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double loss_sum = 0.0;
        double wall_ms = 0.0;
        for (std::size_t b = 0; b < batches; ++b) {
            const auto t0 = std::chrono::steady_clock::now();
            const std::size_t begin = b * config.batch_size;
            const std::size_t end = std::min(n_train, begin + config.batch_size);
            std::vector<const Tensor*> clouds;
            std::vector<std::size_t> labels;
            for (std::size_t i = begin; i < end; ++i) {
                clouds.push_back(&dataset.train[order[i]].cloud.points);
                labels.push_back(dataset.train[order[i]].label);
            }

            ad::Graph graph;
            std::vector<Tensor*> params;
            std::vector<ad::NodeId> param_nodes;
            auto trainable = [&](Tensor& t) {
                const ad::NodeId id = graph.parameter(t);
                params.push_back(&t);
                param_nodes.push_back(id);
                return id;
            };
            mam::CurrentNodes current;
            backbone::NetworkNodes net;
            for (std::size_t l = 0; l < layers; ++l) {
                current.knowledge.push_back(trainable(kb.layers()[l]));
                current.deconv_kernels.push_back(trainable(factors.deconv_kernels[l]));
                current.contractions.push_back(trainable(factors.contractions[l]));
                net.kernels.push_back(factor::reconstruct_kernel(graph, current.knowledge[l], current.deconv_kernels[l],
                                                                 current.contractions[l]));
                net.biases.push_back(trainable(factors.biases[l]));
            }
            for (std::size_t i = 0; i < factors.head.weights.size(); ++i) {
                net.head_weights.push_back(trainable(factors.head.weights[i]));
                net.head_biases.push_back(trainable(factors.head.biases[i]));
            }

            const ad::NodeId batch = graph.constant(backbone::make_batch(clouds));
            const ad::NodeId logits = backbone::forward(graph, batch, net);
            const ad::NodeId lc = backbone::classification_loss(graph, logits, labels, config.backbone.loss);
            ad::NodeId total = lc;
            if (regularize && !archive.empty()) {
                total = mam::total_loss(graph, lc, kb, current, archive.regularizer_view(), config.mam).total;
            }
            const double loss = graph.value(total).item();
            if (!std::isfinite(loss)) {
                throw NumericError("non-finite loss at task " + std::to_string(task_index + 1) + " epoch " +
                                   std::to_string(epoch + 1) + " step " + std::to_string(b + 1));
            }
            loss_sum += loss;

            auto grad_map = ad::backward(graph, total);
            std::vector<Tensor> grads;
            grads.reserve(param_nodes.size());
            for (auto id : param_nodes) grads.push_back(std::move(grad_map.at(id)));
            adam_step(params, grads, opt_state, config.optimizer);
            ++result.steps;
            wall_ms += std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        }
        const metrics::EpochRecord record{task_index + 1, epoch + 1, loss_sum / static_cast<double>(batches),
                                          evaluate_task(kb, factors, dataset), wall_ms};
        result.log.epochs.push_back(record);
        if (on_epoch) on_epoch(record);
    }
    result.factors = std::move(factors);
    return result;
}

RunResult run_sequence(const ExperimentConfig& config, std::span<const data::TaskDataset> tasks,
                       const EpochCallback& on_epoch) {
    config.validate();
    if (tasks.empty()) throw DataError("run_sequence: no tasks");
    RunResult run;
    run.knowledge = factor::init_knowledge_base(config.spec, derive_seed(config.seed, kKnowledgeSeed, 0),
                                                config.init_stddev);
    const bool stl = config.mode == Mode::Stl;
    std::optional<factor::TaskFactors> previous;

    for (std::size_t t = 0; t < tasks.size(); ++t) {
        const auto& dataset = tasks[t];
        if (stl && t > 0) {
            run.knowledge = factor::init_knowledge_base(config.spec, derive_seed(config.seed, kKnowledgeSeed, t),
                                                        config.init_stddev);
        }
        const factor::TaskFactors* inherit = stl || !previous ? nullptr : &*previous;
        auto factors = factor::init_or_inherit_factors(inherit, config.spec, config.backbone, dataset.num_classes(),
                                                       t + 1, derive_seed(config.seed, kFactorSeed, t),
                                                       config.init_stddev);
        TaskResult result = train_task(t, dataset, run.knowledge, std::move(factors), run.archive, config, on_epoch);
        run.total_steps += result.steps;

        if (!stl) run.knowledge.take_snapshot();
        const double peak = metrics::ppa(result.log.accuracy_trace());
        std::optional<factor::KnowledgeBase> own;
        if (stl) own = run.knowledge;
        previous = result.factors;
        run.archive.append(std::move(result.factors), {t + 1, peak, &dataset, std::move(own)});
        result.log.seen_accuracies = evaluate_archive(run.knowledge, run.archive, config.eval_threads);
        run.log.tasks.push_back(std::move(result.log));
    }
    return run;
}

}  // namespace l3doc::train
