#pragma once

#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mgimm/autograd.hpp"

namespace mgimm {

/// Model sections; freezing is decided per section by the training stages.
enum class Section { encoder, rim, v2l, lm, lora };

std::string_view section_name(Section section);
Section section_from_name(std::string_view name);

template <typename T>
struct Parameter {
    Tensor<T> value;
    Section section = Section::lm;
    bool trainable = true;
    // Fixed tensors (e.g. positional-encoding frequencies) that are never
    // trained regardless of section flags.
    bool buffer = false;
};

/// Named parameter registry. Iteration order is the lexicographic name
/// order, which fixes checkpoint layout and optimizer traversal.
template <typename T>
class ParamStore {
public:
    using Map = std::map<std::string, Parameter<T>>;

    void add(std::string name, Tensor<T> value, Section section, bool trainable = true) {
        if (params_.count(name) != 0) {
            throw ValidationError("duplicate parameter name '" + name + "'");
        }
        params_.emplace(std::move(name), Parameter<T>{std::move(value), section, trainable, false});
    }

    void add_buffer(std::string name, Tensor<T> value, Section section) {
        add(name, std::move(value), section, false);
        params_.at(name).buffer = true;
    }

    bool contains(const std::string& name) const { return params_.count(name) != 0; }

    Parameter<T>& at(const std::string& name) {
        auto it = params_.find(name);
        if (it == params_.end()) {
            throw ValidationError("unknown parameter '" + name + "'");
        }
        return it->second;
    }
    const Parameter<T>& at(const std::string& name) const {
        return const_cast<ParamStore*>(this)->at(name);
    }

    Tensor<T>& value(const std::string& name) { return at(name).value; }
    const Tensor<T>& value(const std::string& name) const { return at(name).value; }

    void set_trainable(Section section, bool trainable) {
        for (auto& [name, p] : params_) {
            if (p.section == section && !p.buffer) p.trainable = trainable;
        }
    }

    void set_all_trainable(bool trainable) {
        for (auto& [name, p] : params_) p.trainable = trainable && !p.buffer;
    }

    void remove_section(Section section) {
        std::erase_if(params_, [section](const auto& kv) { return kv.second.section == section; });
    }

    std::size_t count(Section section) const {
        std::size_t n = 0;
        for (const auto& [name, p] : params_) n += (p.section == section);
        return n;
    }

    std::size_t size() const { return params_.size(); }
    std::size_t numel() const {
        std::size_t n = 0;
        for (const auto& [name, p] : params_) n += p.value.size();
        return n;
    }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        for (const auto& [name, p] : params_) out.push_back(name);
        return out;
    }

    typename Map::iterator begin() { return params_.begin(); }
    typename Map::iterator end() { return params_.end(); }
    typename Map::const_iterator begin() const { return params_.begin(); }
    typename Map::const_iterator end() const { return params_.end(); }

    template <typename U>
    ParamStore<U> cast() const {
        ParamStore<U> out;
        for (const auto& [name, p] : params_) {
            if (p.buffer) {
                out.add_buffer(name, p.value.template cast<U>(), p.section);
            } else {
                out.add(name, p.value.template cast<U>(), p.section, p.trainable);
            }
        }
        return out;
    }

private:
    Map params_;
};

/// Puts parameters on a tape on first use and hands out the same Var for
/// repeated lookups. Frozen parameters become non-differentiable leaves;
/// with track_grad=false every parameter does (inference).
template <typename T>
class Binder {
public:
    Binder(Tape<T>& tape, const ParamStore<T>& store, bool track_grad = true)
        : tape_(tape), store_(store), track_grad_(track_grad) {}

    Var<T> operator()(const std::string& name) {
        auto it = bound_.find(name);
        if (it != bound_.end()) {
            return it->second;
        }
        const auto& p = store_.at(name);
        auto var = tape_.leaf(p.value, track_grad_ && p.trainable, name);
        bound_.emplace(name, var);
        return var;
    }

    bool has(const std::string& name) const { return store_.contains(name); }

    Tape<T>& tape() { return tape_; }
    const ParamStore<T>& store() const { return store_; }

private:
    Tape<T>& tape_;
    const ParamStore<T>& store_;
    bool track_grad_ = true;
    std::unordered_map<std::string, Var<T>> bound_;
};

}  // namespace mgimm
