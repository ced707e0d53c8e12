#!/usr/bin/env python3
"""
Development setup for Lumen
Checks the Python packages, creates or updates the conda environment
and lays out the data / run folders the command line writes into
"""

import argparse
import importlib
import os
import subprocess

ENV_NAME = 'Lumen'
WORK_DIRS = ['data', 'runs', 'runs/checkpoints', 'runs/infer', 'runs/samples', 'runs/eval']

# import name -> pip name
REQUIRED_PACKAGES = {
    'numpy': 'numpy',
    'pandas': 'pandas',
    'PIL': 'Pillow',
    'torch': 'torch',
    'torchvision': 'torchvision',
    'tqdm': 'tqdm',
}


def package_versions(packages=None):
    """Installed version per pip name, None when the import fails"""
    versions = {}
    for module_name, pip_name in (packages or REQUIRED_PACKAGES).items():
        try:
            module = importlib.import_module(module_name)
        except ImportError:
            versions[pip_name] = None
            continue
        versions[pip_name] = getattr(module, '__version__', 'unknown')
    return versions


def missing_packages(packages=None):
    return sorted(name for name, version in package_versions(packages).items() if version is None)


def check_packages():
    print("=== Checking packages ===")
    versions = package_versions()
    for name, version in versions.items():
        if version is None:
            print(f"❌ {name} not installed")
        else:
            print(f"✅ {name} {version}")
    return all(version is not None for version in versions.values())


def run_command(command, description):
    """Run a command and report the outcome"""
    print(f"🔄 {description}...")
    try:
        subprocess.run(command, check=True, capture_output=True, text=True)
    except (subprocess.CalledProcessError, FileNotFoundError) as e:
        print(f"❌ {description} failed: {e}")
        if getattr(e, 'stderr', None):
            print(f"Error output: {e.stderr}")
        return False
    print(f"✅ {description} done")
    return True


def conda_env_exists(name=ENV_NAME):
    try:
        listing = subprocess.run(['conda', 'env', 'list'], check=True, capture_output=True, text=True).stdout
    except (subprocess.CalledProcessError, FileNotFoundError):
        return False
    return any(line.split() and line.split()[0] == name for line in listing.splitlines())


def setup_conda():
    """Create the environment from environment.yml, or update it when it already exists"""
    print("=== Setting up conda environment ===")
    if not run_command(['conda', '--version'], "Looking for conda"):
        print("❌ Conda not found. Install Anaconda or Miniconda, or use: pip install -r requirements.txt")
        return False

    if conda_env_exists():
        return run_command(['conda', 'env', 'update', '-n', ENV_NAME, '-f', 'environment.yml', '--prune'],
                           f"Updating {ENV_NAME} environment")
    return run_command(['conda', 'env', 'create', '-f', 'environment.yml'], f"Creating {ENV_NAME} environment")


def setup_dirs(root='.'):
    """Create dataset and run folders below root; returns the created paths"""
    print("=== Setting up work folders ===")
    created = []
    for directory in WORK_DIRS:
        path = os.path.join(root, directory)
        os.makedirs(path, exist_ok=True)
        created.append(path)
        print(f"📁 {path}")
    return created


def main():
    parser = argparse.ArgumentParser(description='Lumen development setup')
    parser.add_argument('--check', action='store_true', help='Report installed package versions')
    parser.add_argument('--conda', action='store_true', help='Create or update the conda environment')
    parser.add_argument('--dirs', action='store_true', help='Create data and run folders')
    parser.add_argument('--all', action='store_true', help='All of the above')
    parser.add_argument('--root', default='.', help='Where to create the folders')
    args = parser.parse_args()

    if not any([args.check, args.conda, args.dirs, args.all]):
        parser.print_help()
        return

    success = True
    if args.conda or args.all:
        success &= setup_conda()
    if args.check or args.all:
        success &= check_packages()
    if args.dirs or args.all:
        setup_dirs(args.root)

    if success:
        print("\n🎉 Setup complete")
        print("\n📋 Next steps:")
        if args.conda or args.all:
            print(f"  conda activate {ENV_NAME}")
        print("  python run_lumen.py gen-data --config lumen_smoke.conf --out data")
        print("  python run_lumen.py train --config lumen_smoke.conf --data data --out runs")
    else:
        print("\n❌ Setup incomplete, see the messages above")


if __name__ == "__main__":
    main()
