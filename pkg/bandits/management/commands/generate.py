import numpy as np

from ...models import World
from ...replay import synthesize_logs
from ...simulation import generate_world, save_world
from ..base import BanditCommand


class Command(BanditCommand):
    help = "Generate a synthetic world (and optionally uniform-random logs) into --out."

    experiment_flags = False

    def add_command_arguments(self, parser):
        parser.add_argument("--logs", type=int, metavar="N", help="Also write N logged events per user.")
        parser.add_argument("--name", default="", help="World name when recording.")

    def run(self, **options):
        params, seed = self.world_params(options)
        world = generate_world(params, seed)
        out = self.output_dir(options, f"world-{seed}")
        save_world(world, out)
        self.stdout.write(
            f"World d={world.dim} N={world.num_arms} K={world.num_keyterms} "
            f"users={world.num_users} written to {out}"
        )
        if options.get("logs"):
            events, _, _ = synthesize_logs(world, options["logs"], np.random.default_rng(seed), directory=out)
            self.stdout.write(f"{len(events)} logged events written to {out}")
        if options.get("record"):
            row = World.objects.create(name=options["name"] or f"world-{seed}", seed=seed, **params.to_dict())
            self.stdout.write(f"Recorded world {row.id}")
