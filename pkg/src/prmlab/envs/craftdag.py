"""Item crafting over a recipe DAG.

A family shares one universe of items: base items that can be fetched and
crafted items made by consuming their recipe ingredients. Each task asks
for one target item starting from some initial inventory. Crafting without
the ingredients is an observable no-op; fetching always succeeds and wastes
a step when the item is not needed.

Observations list what still has to be fetched and what can be crafted
right now for the target, mirroring how crafting games surface recipes in
context, so behavior learned on one task transfers to unseen targets and
inventories of the same universe.
"""

from __future__ import annotations

from collections import Counter

from ..errors import ConfigurationError
from ..seeding import rng_from
from .core import Action, Environment, Task


class CraftDag(Environment):
    family = "craftdag"

    def __init__(
        self,
        base_items: list[str],
        recipes: dict[str, tuple[str, ...]],
        specs: dict[str, tuple[Task, tuple[str, tuple[str, ...]]]],
    ):
        """``specs`` maps task id -> (Task, (target item, initial inventory))."""
        self.base_items = list(base_items)
        self.recipes = dict(recipes)
        for item, ingredients in recipes.items():
            for ing in ingredients:
                if ing not in self.base_items and ing not in recipes:
                    raise ConfigurationError(f"recipe {item!r} uses unknown item {ing!r}")
        self._specs = {tid: spec for tid, (_, spec) in specs.items()}
        self._actions = [f"fetch {b}" for b in self.base_items] + [
            f"craft {c}" for c in sorted(self.recipes)
        ]
        super().__init__(task for _, (task, _) in specs.items())

    # -- construction --------------------------------------------------------

    @classmethod
    def generate(
        cls,
        n_base: int,
        level_sizes: list[int],
        horizon: int,
        n_tasks: int,
        seed: int,
        max_initial_items: int = 2,
    ) -> "CraftDag":
        """Sample a recipe universe, then ``n_tasks`` solvable tasks over it."""
        rng = rng_from("craftdag-universe", seed)
        base = [f"b{i}" for i in range(n_base)]
        recipes: dict[str, tuple[str, ...]] = {}
        pool = list(base)
        crafted: list[str] = []
        for level, size in enumerate(level_sizes):
            level_items = []
            for j in range(size):
                name = f"c{level}{j}"
                picks = rng.choice(len(pool), size=2, replace=False)
                recipes[name] = (pool[int(picks[0])], pool[int(picks[1])])
                level_items.append(name)
            pool = pool + level_items
            crafted.extend(level_items)
        top = [f"c{len(level_sizes) - 1}{j}" for j in range(level_sizes[-1])]

        probe = cls(base, recipes, {})
        specs: dict[str, tuple[Task, tuple[str, tuple[str, ...]]]] = {}
        for i in range(n_tasks):
            task_rng = rng_from("craftdag-task", seed, i)
            for _ in range(200):
                target = top[int(task_rng.integers(len(top)))]
                n_initial = int(task_rng.integers(max_initial_items + 1))
                held = [
                    base[int(k)]
                    for k in task_rng.choice(len(base), size=n_initial, replace=False)
                ]
                inventory = tuple(sorted(held))
                plan = probe._plan(target, Counter(inventory))
                if plan is not None and len(plan) <= horizon:
                    break
            else:
                raise ConfigurationError(
                    f"could not sample a solvable crafting task within horizon {horizon}"
                )
            tid = f"cd-{i:04d}"
            instruction = f"obtain {target}; start with [{','.join(inventory)}]"
            specs[tid] = (Task(tid, instruction, horizon), (target, inventory))
        return cls(base, recipes, specs)

    @classmethod
    def from_config(cls, cfg: dict) -> "CraftDag":
        return cls.generate(
            cfg.get("base_items", 6),
            cfg.get("level_sizes", [3, 2]),
            cfg["horizon"],
            cfg["tasks"],
            cfg["seed"],
            max_initial_items=cfg.get("max_initial_items", 2),
        )

    # -- environment protocol ------------------------------------------------

    @property
    def action_names(self) -> list[str]:
        return list(self._actions)

    def _initial(self, task: Task, seed: int) -> tuple[tuple, str]:
        target, inventory = self._specs[task.id]
        sim = tuple(sorted(inventory))
        return sim, self._observe(target, Counter(sim), "start")

    def _transition(self, task: Task, sim: tuple, action: str) -> tuple[tuple, str, bool]:
        target, _ = self._specs[task.id]
        inventory = Counter(sim)
        verb, item = action.split(" ", 1)
        if verb == "fetch":
            inventory[item] += 1
            result = f"got:{item}"
        else:
            need = Counter(self.recipes[item])
            if all(inventory[ing] >= k for ing, k in need.items()):
                inventory -= need
                inventory[item] += 1
                result = f"made:{item}"
            else:
                result = "cannot"
        sim2 = tuple(sorted(inventory.elements()))
        goal_reached = inventory[target] >= 1
        return sim2, self._observe(target, inventory, result), goal_reached

    def _observe(self, target: str, inventory: Counter, result: str) -> str:
        plan = self._plan(target, inventory.copy())
        fetches: list[str] = []
        crafts: list[str] = []
        if plan is not None:
            seen: set[str] = set()
            for verb, item in (step.split(" ", 1) for step in plan):
                if item in seen:
                    continue
                seen.add(item)
                if verb == "fetch":
                    fetches.append(item)
                elif self._craftable_now(item, inventory):
                    crafts.append(item)
        have = int(inventory[target] >= 1)
        return (
            f"t={target} h={have} f=[{','.join(sorted(fetches))}]"
            f" c=[{','.join(sorted(crafts))}] r={result}"
        )

    def _craftable_now(self, item: str, inventory: Counter) -> bool:
        need = Counter(self.recipes[item])
        return all(inventory[ing] >= k for ing, k in need.items())

    # -- planning ---------------------------------------------------------------

    def _plan(self, item: str, avail: Counter) -> list[str] | None:
        """Fetch/craft sequence producing one ``item``, consuming from ``avail``."""
        if avail[item] > 0:
            avail[item] -= 1
            return []
        if item in self.base_items:
            return [f"fetch {item}"]
        if item not in self.recipes:
            return None
        steps: list[str] = []
        for ing in self.recipes[item]:
            sub = self._plan(ing, avail)
            if sub is None:
                return None
            steps.extend(sub)
        steps.append(f"craft {item}")
        return steps

    def expert_actions(self, task: Task) -> list[Action]:
        target, inventory = self._specs[task.id]
        plan = self._plan(target, Counter(inventory))
        if plan is None:
            raise ConfigurationError(f"task {task.id!r} has no crafting plan")
        return [Action(step) for step in plan]
