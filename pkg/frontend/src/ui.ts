// DOM rendering and keyboard wiring. Everything displayed comes straight
// from the controller snapshot; this layer holds no state of its own.

import { SessionController, Snapshot } from './controller.js';
import { CRITERIA, CRITERION_LABELS, Criterion } from './types.js';

function el<K extends keyof HTMLElementTagNameMap>(
    tag: K,
    className?: string,
    text?: string,
): HTMLElementTagNameMap[K] {
    const node = document.createElement(tag);
    if (className) node.className = className;
    if (text !== undefined) node.textContent = text;
    return node;
}

/** Answer text with [SEG] sites rendered as highlighted chips. */
export function renderAnswer(answer: string): DocumentFragment {
    const fragment = document.createDocumentFragment();
    const parts = answer.split('[SEG]');
    parts.forEach((part, i) => {
        fragment.appendChild(document.createTextNode(part));
        if (i < parts.length - 1) {
            fragment.appendChild(el('span', 'seg-chip', `[SEG ${i + 1}]`));
        }
    });
    return fragment;
}

export function mount(root: HTMLElement, controller: SessionController): void {
    controller.subscribe((snap) => render(root, controller, snap));
    document.addEventListener('keydown', (event) => {
        const snap = controller.snapshot();
        if (snap.phase !== 'reviewing' || !snap.form) return;
        if (event.target instanceof HTMLTextAreaElement) return;
        if (event.key === 'p') snap.form.choosePass();
        else if (event.key === '1') snap.form.chooseFlag('logicality');
        else if (event.key === '2') snap.form.chooseFlag('coherence');
        else if (event.key === '3') snap.form.chooseFlag('clarity');
        else if (event.key === 'Enter' && snap.form.canSubmit()) {
            void controller.submit();
            return;
        } else return;
        render(root, controller, controller.snapshot());
    });
    void controller.loadNext();
}

function render(root: HTMLElement, controller: SessionController, snap: Snapshot): void {
    root.replaceChildren();
    if (snap.phase === 'loading') {
        root.appendChild(el('p', 'status', 'loading…'));
        return;
    }
    if (snap.phase === 'error') {
        const banner = el('div', 'banner error');
        banner.appendChild(el('p', undefined, snap.error ?? 'service unreachable'));
        const retry = el('button', undefined, 'retry');
        retry.addEventListener('click', () => void controller.loadNext());
        banner.appendChild(retry);
        root.appendChild(banner);
        return;
    }
    if (snap.phase === 'done') {
        root.appendChild(el('h2', undefined, 'All items reviewed'));
        const list = el('ul', 'progress');
        for (const [name, stats] of Object.entries(snap.progress?.inspectors ?? {})) {
            list.appendChild(
                el('li', undefined, `${name}: ${stats.judged}/${stats.total} judged`),
            );
        }
        root.appendChild(list);
        return;
    }
    const item = snap.item;
    const form = snap.form;
    if (!item || !form) return;

    if (snap.toast) {
        root.appendChild(el('div', 'toast', snap.toast));
    }
    if (snap.phase === 'retrying') {
        root.appendChild(el('div', 'banner warn', 'submit failed, retrying…'));
    }

    const header = el('div', 'item-header');
    header.appendChild(el('span', 'qa-id', item.qa_id));
    header.appendChild(el('span', 'flags', `${item.flag_count} flag(s) so far`));
    root.appendChild(header);

    const overlay = el('img', 'overlay');
    overlay.src = item.overlay_url;
    overlay.alt = `mask overlay for ${item.qa_id}`;
    root.appendChild(overlay);

    const labels = el('p', 'targets', `targets: ${item.target_labels.join(' · ')}`);
    root.appendChild(labels);

    for (const violation of item.auto_violations) {
        root.appendChild(
            el('span', `badge ${violation.rule}`, CRITERION_LABELS[violation.rule]),
        );
    }

    root.appendChild(el('p', 'question', item.question));
    const answer = el('p', 'answer');
    answer.appendChild(renderAnswer(item.answer));
    root.appendChild(answer);

    const controls = el('div', 'controls');
    const pass = el('button', form.choice === 'pass' ? 'active' : undefined, 'pass (p)');
    pass.addEventListener('click', () => {
        form.choosePass();
        render(root, controller, controller.snapshot());
    });
    controls.appendChild(pass);
    CRITERIA.forEach((criterion: Criterion, i) => {
        const active = form.choice === 'flag' && form.criterion === criterion;
        const button = el(
            'button',
            active ? 'active flag' : 'flag',
            `${CRITERION_LABELS[criterion]} (${i + 1})`,
        );
        button.addEventListener('click', () => {
            form.chooseFlag(criterion);
            render(root, controller, controller.snapshot());
        });
        controls.appendChild(button);
    });
    root.appendChild(controls);

    const note = el('textarea', 'note');
    note.placeholder = 'note (optional)';
    note.value = form.note;
    note.addEventListener('input', () => form.setNote(note.value));
    root.appendChild(note);

    const submit = el('button', 'submit', 'submit (enter)');
    submit.disabled = !form.canSubmit() || snap.phase === 'submitting';
    submit.addEventListener('click', () => void controller.submit());
    root.appendChild(submit);
}
