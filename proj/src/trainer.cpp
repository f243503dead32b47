#include "dpt/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "dpt/rng.hpp"

namespace dpt {

const char* method_name(TrainMethod m) {
    switch (m) {
        case TrainMethod::vanilla: return "vanilla";
        case TrainMethod::dpt: return "dpt";
        case TrainMethod::residual: return "residual";
        case TrainMethod::rank_probe: return "rank-probe";
        case TrainMethod::full_ft: return "full-ft";
    }
    return "?";
}

TrainMethod method_from_name(const std::string& name) {
    if (name == "vanilla") return TrainMethod::vanilla;
    if (name == "dpt" || name == "decomposed") return TrainMethod::dpt;
    if (name == "residual") return TrainMethod::residual;
    if (name == "rank-probe") return TrainMethod::rank_probe;
    if (name == "full-ft") return TrainMethod::full_ft;
    throw ConfigError("unknown method '" + name +
                      "' (expected vanilla|dpt|residual|rank-probe|full-ft)");
}

bool is_prompt_method(TrainMethod m) { return m != TrainMethod::full_ft; }

PromptKind prompt_kind_for(TrainMethod m) {
    switch (m) {
        case TrainMethod::vanilla: return PromptKind::vanilla;
        case TrainMethod::dpt: return PromptKind::decomposed;
        case TrainMethod::residual: return PromptKind::residual;
        case TrainMethod::rank_probe: return PromptKind::rank_probe;
        case TrainMethod::full_ft: break;
    }
    throw ConfigError("full-ft has no prompt parameterization");
}

void TrainConfig::validate() const {
    if (lr <= 0.0) throw ConfigError("TrainConfig: lr must be > 0");
    if (epochs < 1) throw ConfigError("TrainConfig: epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("TrainConfig: batch_size must be >= 1");
    if (eval_max_steps < 1) throw ConfigError("TrainConfig: eval_max_steps must be >= 1");
}

namespace {

void check_gradient_flow(const std::vector<Tensor>& params) {
    for (const Tensor& p : params) {
        if (!p.has_grad()) {
            throw InternalError("gradient-flow: trainable tensor " + shape_str(p.shape()) +
                                " received no gradient after backward");
        }
    }
}

void check_backbone_untouched(const Backbone& bb) {
    for (auto& [name, t] : bb.named_weights()) {
        if (t.requires_grad() || t.has_grad()) {
            throw InternalError("frozen-violation: backbone weight " + name +
                                " was touched during a prompt-mode run");
        }
    }
}

}  // namespace

RunLog train(Backbone& bb, PromptParameterization* param, const Dataset& train_set,
             const Dataset& dev_set, const TrainConfig& config, const StepHook& hook) {
    config.validate();
    if (train_set.empty()) throw UsageError("train: empty training set");

    const bool prompt_mode = is_prompt_method(config.method);
    if (prompt_mode) {
        if (param == nullptr) throw UsageError("train: prompt method requires a parameterization");
        if (param->kind() != prompt_kind_for(config.method)) {
            throw UsageError(std::string("train: method ") + method_name(config.method) +
                             " given a " + prompt_kind_name(param->kind()) + " parameterization");
        }
        if (!bb.frozen()) throw UsageError("train: backbone must be frozen for prompt methods");
    } else {
        bb.unfreeze();
    }

    std::vector<Tensor> trainable = prompt_mode ? param->trainable() : bb.weights();
    AdamWConfig opt_cfg{config.lr, config.beta1, config.beta2, config.eps, config.weight_decay};
    AdamW opt(trainable, opt_cfg);

    RunLog log;
    log.checksum_before = bb.checksum();
    log.trainable_params = 0;
    for (const Tensor& t : trainable) log.trainable_params += t.numel();
    log.config_echo = {
        {"method", method_name(config.method)},
        {"lr", format_f17(config.lr)},
        {"epochs", std::to_string(config.epochs)},
        {"batch_size", std::to_string(config.batch_size)},
        {"weight_decay", format_f17(config.weight_decay)},
        {"beta1", format_f17(config.beta1)},
        {"beta2", format_f17(config.beta2)},
        {"eps", format_f17(config.eps)},
        {"seed", std::to_string(config.seed)},
        {"train_size", std::to_string(train_set.size())},
        {"dev_size", std::to_string(dev_set.size())},
        {"trainable_params", std::to_string(log.trainable_params)},
    };

    Rng rng(config.seed ^ 0xd1b54a32d192ed03ull);
    std::vector<std::size_t> order(train_set.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    Tape& tape = Tape::active();
    tape.clear();
    const Tensor empty_prompt = Tensor::zeros({bb.config().e, 0});
    long step = 0;
    bool first_backward_done = false;
    if (hook) hook(0);

    for (int epoch = 1; epoch <= config.epochs && !log.aborted_non_finite; ++epoch) {
        rng.shuffle(order);
        std::size_t i = 0;
        while (i < order.size() && !log.aborted_non_finite) {
            const std::size_t batch_end =
                std::min(order.size(), i + static_cast<std::size_t>(config.batch_size));
            const double inv_batch = 1.0 / static_cast<double>(batch_end - i);
            double batch_loss = 0.0;
            for (; i < batch_end; ++i) {
                const TextToTextExample& ex = train_set[order[i]];
                tape.clear();
                Tensor p_emb = prompt_mode ? param->materialize() : empty_prompt;
                ForwardResult r = backbone_forward(bb, p_emb, ex.input, ex.target);
                const double loss_v = r.loss.value();
                if (!std::isfinite(loss_v)) {
                    log.aborted_non_finite = true;
                    break;
                }
                batch_loss += loss_v * inv_batch;
                backward(scale(r.loss, inv_batch));
                if (!first_backward_done) {
                    first_backward_done = true;
                    check_gradient_flow(trainable);
                    if (prompt_mode) check_backbone_untouched(bb);
                }
            }
            tape.clear();
            if (log.aborted_non_finite) break;
            opt.step();
            opt.zero_grad();
            ++step;
            log.steps.push_back({step, batch_loss});
            if (hook) hook(step);
        }
        if (log.aborted_non_finite) break;
        double acc = 0.0;
        if (!dev_set.empty()) {
            Tensor p_eval = prompt_mode ? param->materialize().detach() : empty_prompt;
            tape.clear();
            acc = exact_match_accuracy(bb, p_eval, dev_set, config.eval_max_steps);
        }
        log.epochs.push_back({epoch, acc});
        log.best_accuracy = std::max(log.best_accuracy, acc);
    }

    log.final_loss = log.steps.empty() ? 0.0 : log.steps.back().loss;
    log.final_accuracy = log.epochs.empty() ? 0.0 : log.epochs.back().accuracy;
    log.checksum_after = bb.checksum();
    if (prompt_mode && log.checksum_after != log.checksum_before) {
        throw InternalError("frozen-violation: backbone checksum changed during prompt tuning");
    }
    return log;
}

Dataset few_shot_sample(const Dataset& dataset, std::size_t k, std::uint64_t seed) {
    if (k > dataset.size()) {
        throw LengthError("few_shot_sample: k=" + std::to_string(k) + " exceeds dataset size " +
                          std::to_string(dataset.size()));
    }
    Rng rng(seed ^ 0x94d049bb133111ebull);
    const std::vector<std::size_t> idx = rng.sample_indices(dataset.size(), k);
    Dataset out;
    out.reserve(k);
    for (std::size_t i : idx) out.push_back(dataset[i]);
    return out;
}

void write_runlog_csv(std::ostream& os, const RunLog& log) {
    for (const auto& [key, value] : log.config_echo) os << "# " << key << " = " << value << "\n";
    os << "step,loss\n";
    for (const StepRecord& s : log.steps) os << s.step << ',' << format_f17(s.loss) << "\n";
    os << "epoch,accuracy\n";
    for (const EpochRecord& e : log.epochs) os << e.epoch << ',' << format_f17(e.accuracy) << "\n";
    os << "summary,final_accuracy=" << format_f17(log.final_accuracy)
       << ",best_accuracy=" << format_f17(log.best_accuracy)
       << ",final_loss=" << format_f17(log.final_loss)
       << ",trainable_params=" << log.trainable_params
       << ",aborted=" << (log.aborted_non_finite ? 1 : 0) << ",config=";
    for (std::size_t i = 0; i < log.config_echo.size(); ++i) {
        if (i) os << ';';
        os << log.config_echo[i].first << '=' << log.config_echo[i].second;
    }
    os << "\n";
}

}  // namespace dpt
